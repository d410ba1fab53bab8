mod common;

use std::collections::BTreeMap;

use common::{gaussian_matrix, oracle_ball_measure, oracle_eta, oracle_gamma, oracle_r_delta, rng, Obs};
use mnse_core::bounds::{
    estimate_alignment, estimate_ball_measure, estimate_compactness, estimate_separation, EmbeddedModality,
};
use mnse_core::dataset::MultiModalDataset;
use mnse_core::DMatrix;
use proptest::prelude::*;
use rand::Rng;

struct Instance {
    ds: MultiModalDataset,
    embeddings: Vec<DMatrix<f64>>,
    labels: Vec<Vec<usize>>,
}

impl Instance {
    fn random(seed: u64, samples: usize, modalities: usize, classes: usize) -> Self {
        let mut r = rng(seed);
        let labels_of: BTreeMap<u64, usize> = (0..samples as u64).map(|id| (id, id as usize % classes)).collect();
        let mut parts = Vec::new();
        let mut embeddings = Vec::new();
        let mut labels = Vec::new();
        for v in 0..modalities {
            // Every sample is seen in modality 0; later modalities drop some.
            let ids: Vec<u64> = (0..samples as u64)
                .filter(|_| v == 0 || r.random::<f64>() < 0.8)
                .collect();
            let x = gaussian_matrix(&mut r, ids.len(), 2 + v);
            embeddings.push(gaussian_matrix(&mut r, ids.len(), 2));
            labels.push(ids.iter().map(|id| labels_of[id]).collect());
            parts.push((x, ids));
        }
        let ds = MultiModalDataset::new(classes, parts, labels_of).unwrap();
        Instance { ds, embeddings, labels }
    }

    fn views(&self) -> Vec<EmbeddedModality<'_>> {
        (0..self.ds.num_modalities())
            .map(|v| EmbeddedModality {
                ids: self.ds.modality(v).ids(),
                labels: &self.labels[v],
                features: self.ds.modality(v).features(),
                embedding: &self.embeddings[v],
            })
            .collect()
    }

    fn observations(&self) -> Vec<Obs> {
        let mut out = Vec::new();
        for v in 0..self.ds.num_modalities() {
            let m = self.ds.modality(v);
            for (row, &id) in m.ids().iter().enumerate() {
                out.push(Obs {
                    modality: v,
                    id,
                    label: self.labels[v][row],
                    x: m.observation(row),
                    y: self.embeddings[v].row(row).iter().copied().collect(),
                });
            }
        }
        out
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn estimators_equal_exhaustive_enumeration(
        seed in any::<u64>(),
        samples in 4usize..=25,
        modalities in 2usize..=3,
        classes in 2usize..=3,
        delta in 0.05f64..3.0,
    ) {
        let inst = Instance::random(seed, samples, modalities, classes);
        let views = inst.views();
        let obs = inst.observations();
        prop_assert_eq!(estimate_alignment(&views).unwrap(), oracle_eta(&obs));
        prop_assert_eq!(estimate_compactness(&views, delta).unwrap(), oracle_r_delta(&obs, delta));
        prop_assert_eq!(estimate_separation(&views).unwrap(), oracle_gamma(&obs));
        for m in 0..classes {
            prop_assert_eq!(estimate_ball_measure(&inst.ds, m, delta).unwrap(), oracle_ball_measure(&obs, m, delta));
        }
    }
}
