//! Multi-modal labeled datasets.
//!
//! A sample is identified by a global [`SampleId`]; each modality stores the
//! observations it has as feature rows together with the row-to-ID map, so a
//! sample may be missing from some modalities without sentinel values.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{check_finite, sqrt};
use crate::{Error, Result, SampleId};

/// Observations of one modality: an `N × n` feature matrix whose row `i`
/// belongs to sample `ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Modality {
    features: DMatrix<f64>,
    ids: Vec<SampleId>,
    index: BTreeMap<SampleId, usize>,
}

impl Modality {
    fn new(v: usize, features: DMatrix<f64>, ids: Vec<SampleId>) -> Result<Self> {
        if features.nrows() != ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "modality {v}: {} feature rows but {} sample ids",
                features.nrows(),
                ids.len()
            )));
        }
        check_finite(&features, &format!("features of modality {v}"))?;
        let mut index = BTreeMap::new();
        for (row, &id) in ids.iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(Error::DuplicateId { modality: v, id });
            }
        }
        Ok(Modality {
            features,
            ids,
            index,
        })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ambient dimension `n` of this modality.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row_of(&self, id: SampleId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn observation(&self, row: usize) -> Vec<f64> {
        crate::linalg::row(&self.features, row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalDataset {
    num_classes: usize,
    modalities: Vec<Modality>,
    labels: BTreeMap<SampleId, usize>,
}

impl MultiModalDataset {
    /// Builds and validates a dataset from per-modality `(features, ids)`
    /// pairs and a label map.
    ///
    /// Every observed sample must have a label in `0..num_classes`, IDs must
    /// be unique within a modality, and all features finite. Labels of IDs
    /// not observed in any modality are dropped.
    pub fn new(
        num_classes: usize,
        modalities: Vec<(DMatrix<f64>, Vec<SampleId>)>,
        labels: BTreeMap<SampleId, usize>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::param("num_classes", "must be at least 1"));
        }
        if modalities.is_empty() {
            return Err(Error::param("modalities", "at least one modality required"));
        }
        let modalities = modalities
            .into_iter()
            .enumerate()
            .map(|(v, (x, ids))| Modality::new(v, x, ids))
            .collect::<Result<Vec<_>>>()?;
        let mut kept = BTreeMap::new();
        for m in &modalities {
            for &id in &m.ids {
                let label = *labels.get(&id).ok_or(Error::MissingLabel(id))?;
                if label >= num_classes {
                    return Err(Error::LabelOutOfRange {
                        id,
                        label,
                        num_classes,
                    });
                }
                kept.insert(id, label);
            }
        }
        Ok(MultiModalDataset {
            num_classes,
            modalities,
            labels: kept,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn modality(&self, v: usize) -> &Modality {
        &self.modalities[v]
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn labels(&self) -> &BTreeMap<SampleId, usize> {
        &self.labels
    }

    pub fn label(&self, id: SampleId) -> Option<usize> {
        self.labels.get(&id).copied()
    }

    /// Labels of modality `v`'s rows, in row order.
    pub fn modality_labels(&self, v: usize) -> Vec<usize> {
        self.modalities[v]
            .ids
            .iter()
            .map(|id| self.labels[id])
            .collect()
    }

    /// Total number of observations `N = Σ_v N^(v)`.
    pub fn total_observations(&self) -> usize {
        self.modalities.iter().map(Modality::len).sum()
    }

    pub fn sample_ids(&self) -> BTreeSet<SampleId> {
        self.labels.keys().copied().collect()
    }

    /// Sample IDs of class `m`, ascending.
    pub fn class_ids(&self, m: usize) -> Vec<SampleId> {
        self.labels
            .iter()
            .filter(|&(_, &l)| l == m)
            .map(|(&id, _)| id)
            .collect()
    }

    /// Restriction to the given sample IDs, preserving row order.
    pub fn subset(&self, keep: &BTreeSet<SampleId>) -> MultiModalDataset {
        let modalities = self
            .modalities
            .iter()
            .map(|m| {
                let rows: Vec<usize> = (0..m.len()).filter(|&r| keep.contains(&m.ids[r])).collect();
                let features = m.features.select_rows(rows.iter());
                let ids: Vec<SampleId> = rows.iter().map(|&r| m.ids[r]).collect();
                let index = ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
                Modality {
                    features,
                    ids,
                    index,
                }
            })
            .collect();
        let labels = self
            .labels
            .iter()
            .filter(|(id, _)| keep.contains(id))
            .map(|(&id, &l)| (id, l))
            .collect();
        MultiModalDataset {
            num_classes: self.num_classes,
            modalities,
            labels,
        }
    }

    /// Stratified split on global sample IDs.
    ///
    /// Each class's IDs are sorted, shuffled with ChaCha8 seeded by `seed`
    /// (Fisher–Yates as implemented by `rand` 0.9), and the first
    /// `round(f·n)` (clamped to `1..n-1`) go to the training side.
    pub fn split(
        &self,
        train_fraction: f64,
        seed: u64,
    ) -> Result<(MultiModalDataset, MultiModalDataset)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::param(
                "train_fraction",
                format!("{train_fraction} is outside the open interval (0, 1)"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = BTreeSet::new();
        for m in 0..self.num_classes {
            let mut ids = self.class_ids(m);
            if ids.is_empty() {
                continue;
            }
            if ids.len() < 2 {
                return Err(Error::ClassTooSmall {
                    class: m,
                    count: ids.len(),
                    needed: 2,
                });
            }
            ids.shuffle(&mut rng);
            let n = ids.len();
            let take = libm::round(train_fraction * n as f64) as usize;
            let take = take.clamp(1, n - 1);
            train.extend(ids[..take].iter().copied());
        }
        let test: BTreeSet<SampleId> = self.sample_ids().difference(&train).copied().collect();
        Ok((self.subset(&train), self.subset(&test)))
    }
}

/// How modalities after the first are derived from a modality-1-style draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Warp {
    Identity,
    /// A fixed orthonormal linear map plus a fixed offset.
    Affine,
    /// Componentwise cube.
    Cubic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub num_modalities: usize,
    pub per_class: usize,
    /// Ambient dimension per modality; length must equal `num_modalities`.
    pub dims: Vec<usize>,
    /// Minimum distance between class centers.
    pub separation: f64,
    /// Standard deviation of the isotropic within-class noise.
    pub noise: f64,
    pub warp: Warp,
    /// Standard deviation of the noise added after warping.
    pub cross_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 3,
            num_modalities: 2,
            per_class: 20,
            dims: alloc::vec![4, 4],
            separation: 10.0,
            noise: 1.0,
            warp: Warp::Affine,
            cross_noise: 0.1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::param("classes", "must be at least 1"));
        }
        if self.num_modalities == 0 {
            return Err(Error::param("modalities", "must be at least 1"));
        }
        if self.per_class == 0 {
            return Err(Error::param("per_class", "must be at least 1"));
        }
        if self.dims.len() != self.num_modalities {
            return Err(Error::param(
                "dims",
                format!(
                    "{} dimensions given for {} modalities",
                    self.dims.len(),
                    self.num_modalities
                ),
            ));
        }
        if self.dims.contains(&0) {
            return Err(Error::param("dims", "every dimension must be at least 1"));
        }
        for (name, value) in [
            ("separation", self.separation),
            ("noise", self.noise),
            ("cross_noise", self.cross_noise),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::param(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// RNG stream for the training draws of [`generate_synthetic`].
pub const TRAIN_STREAM: u64 = 0;
/// RNG stream for fresh test draws.
pub const FRESH_STREAM: u64 = 1;
/// RNG stream for large reference pools.
pub const POOL_STREAM: u64 = 2;
const STRUCTURE_STREAM: u64 = 7;

/// Truncation radius, in standard deviations, of every Gaussian draw.
pub const TRUNCATION: f64 = 4.0;

/// The class-conditional generator behind [`generate_synthetic`]; can draw
/// any number of fresh samples.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    cfg: SynthConfig,
    centers: Vec<DVector<f64>>,
    affine: Vec<Option<(DMatrix<f64>, DVector<f64>)>>,
}

impl SyntheticSource {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let n1 = cfg.dims[0];
        let centers = (0..cfg.num_classes)
            .map(|m| {
                let mut c = DVector::zeros(n1);
                if n1 >= cfg.num_classes {
                    c[m] = cfg.separation / core::f64::consts::SQRT_2;
                } else {
                    c[0] = cfg.separation * m as f64;
                }
                c
            })
            .collect();
        let mut rng = Self::rng(cfg.seed, STRUCTURE_STREAM);
        let affine = (0..cfg.num_modalities)
            .map(|v| {
                if v == 0 || cfg.warp != Warp::Affine {
                    return None;
                }
                let nv = cfg.dims[v];
                let a = if nv >= n1 {
                    let g = DMatrix::from_fn(nv, n1, |_, _| rng.sample::<f64, _>(StandardNormal));
                    g.qr().q()
                } else {
                    let g = DMatrix::from_fn(n1, nv, |_, _| rng.sample::<f64, _>(StandardNormal));
                    g.qr().q().transpose()
                };
                let b = DVector::from_fn(nv, |_, _| rng.sample::<f64, _>(StandardNormal));
                Some((a, b))
            })
            .collect();
        Ok(SyntheticSource {
            cfg: cfg.clone(),
            centers,
            affine,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    /// ChaCha8 generator for `seed` on the given stream.
    pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }

    pub fn center(&self, class: usize) -> &DVector<f64> {
        &self.centers[class]
    }

    /// One sample of class `class`: an observation per modality, each from
    /// an independent draw.
    pub fn draw<R: Rng>(&self, class: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..self.cfg.num_modalities)
            .map(|v| self.draw_modality(class, v, rng))
            .collect()
    }

    /// One observation of class `class` in modality `v`.
    pub fn draw_modality<R: Rng>(&self, class: usize, v: usize, rng: &mut R) -> Vec<f64> {
        let c = &self.centers[class];
        let z: Vec<f64> = c
            .iter()
            .map(|&ck| ck + self.cfg.noise * truncated_normal(rng))
            .collect();
        if v == 0 {
            return z;
        }
        let nv = self.cfg.dims[v];
        let warped: Vec<f64> = match (self.cfg.warp, &self.affine[v]) {
            (Warp::Affine, Some((a, b))) => {
                let zv = DVector::from_column_slice(&z);
                (a * zv + b).iter().copied().collect()
            }
            (Warp::Cubic, _) => (0..nv).map(|k| libm::pow(z[k % z.len()], 3.0)).collect(),
            _ => (0..nv).map(|k| z[k % z.len()]).collect(),
        };
        warped
            .into_iter()
            .map(|x| x + self.cfg.cross_noise * truncated_normal(rng))
            .collect()
    }
}

fn truncated_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= TRUNCATION {
            return z;
        }
    }
}

/// Draws a labeled dataset where every sample is observed in all modalities.
///
/// Sample `m · per_class + i` is the `i`-th sample of class `m`. Deterministic
/// in the config, including the seed.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<MultiModalDataset> {
    let source = SyntheticSource::new(cfg)?;
    let mut rng = SyntheticSource::rng(cfg.seed, TRAIN_STREAM);
    let total = cfg.num_classes * cfg.per_class;
    let mut rows: Vec<Vec<Vec<f64>>> = (0..cfg.num_modalities)
        .map(|_| Vec::with_capacity(total))
        .collect();
    let mut labels = BTreeMap::new();
    for m in 0..cfg.num_classes {
        for i in 0..cfg.per_class {
            let id = (m * cfg.per_class + i) as SampleId;
            labels.insert(id, m);
            for (v, obs) in source.draw(m, &mut rng).into_iter().enumerate() {
                rows[v].push(obs);
            }
        }
    }
    let ids: Vec<SampleId> = (0..total as SampleId).collect();
    let modalities = rows
        .into_iter()
        .enumerate()
        .map(|(v, r)| (rows_to_matrix(&r, cfg.dims[v]), ids.clone()))
        .collect();
    MultiModalDataset::new(cfg.num_classes, modalities, labels)
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), dim, |i, k| rows[i][k])
}

/// Largest distance between two observations of the same class in one
/// modality; used for diagnostics on generated data.
pub fn max_class_diameter(ds: &MultiModalDataset) -> f64 {
    let mut best: f64 = 0.0;
    for (v, m) in ds.modalities().iter().enumerate() {
        let labels = ds.modality_labels(v);
        for i in 0..m.len() {
            for j in (i + 1)..m.len() {
                if labels[i] == labels[j] {
                    let d = sqrt(crate::linalg::row_sq_dist(&m.features, i, &m.features, j));
                    best = best.max(d);
                }
            }
        }
    }
    best
}
