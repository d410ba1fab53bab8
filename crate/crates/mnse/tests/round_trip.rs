use mnse::io::{read_dataset, write_dataset};
use mnse::model_file::{from_json, to_json, Exact};
use mnse_core::bounds::fresh_test_set;
use mnse_core::dataset::{generate_synthetic, SynthConfig, Warp};
use mnse_core::eval::{classify, retrieve, Metric, SearchMode};
use mnse_core::optimizer::{train, HyperParams};
use proptest::prelude::*;

#[test]
fn dataset_directory_round_trips_exactly() {
    let cfg = SynthConfig {
        num_modalities: 3,
        dims: vec![2, 5, 3],
        warp: Warp::Cubic,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_dataset(tmp.path(), &ds).unwrap();
    assert_eq!(read_dataset(tmp.path()).unwrap(), ds);
}

#[test]
fn saved_model_reproduces_outputs_bit_for_bit() {
    let cfg = SynthConfig::default();
    let ds = generate_synthetic(&cfg).unwrap();
    let model = train(&ds, &HyperParams::retrieval()).unwrap();
    let text = to_json(&model).unwrap();
    let loaded = from_json(&text).unwrap();
    assert_eq!(to_json(&loaded).unwrap(), text);

    let test = fresh_test_set(&cfg, 10).unwrap();
    for v in 0..2 {
        let m = test.modality(v);
        for row in 0..m.len() {
            let x = m.observation(row);
            for mode in [SearchMode::AllModalities, SearchMode::OwnModality] {
                assert_eq!(classify(&model, &x, v, mode).unwrap(), classify(&loaded, &x, v, mode).unwrap());
            }
            for metric in [Metric::Euclidean, Metric::Cosine] {
                let a = retrieve(&model, &x, v, 1 - v, 20, metric).unwrap();
                let b = retrieve(&loaded, &x, v, 1 - v, 20, metric).unwrap();
                assert_eq!(a.ranked.len(), b.ranked.len());
                for (p, q) in a.ranked.iter().zip(&b.ranked) {
                    assert_eq!(p.0, q.0);
                    assert_eq!(p.1.to_bits(), q.1.to_bits());
                }
            }
        }
    }
}

#[test]
fn corrupted_model_files_are_rejected() {
    let ds = generate_synthetic(&SynthConfig { per_class: 4, ..SynthConfig::default() }).unwrap();
    let text = to_json(&train(&ds, &HyperParams::classification()).unwrap()).unwrap();
    assert!(from_json(&text.replace("\"mnse-model\"", "\"other\"")).is_err());
    assert!(from_json(&text.replace("\"version\":1", "\"version\":9")).is_err());
    assert!(from_json(&text[..text.len() / 2]).is_err());
}

proptest! {
    #[test]
    fn every_finite_double_survives_json(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(x.is_finite());
        let back: Exact = serde_json::from_str(&serde_json::to_string(&Exact(x)).unwrap()).unwrap();
        prop_assert_eq!(back.0.to_bits(), x.to_bits());
    }
}
