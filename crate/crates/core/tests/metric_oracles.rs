mod common;

use std::collections::BTreeSet;

use common::{brute_average_precision, brute_precision_recall, rng};
use mnse_core::eval::{average_precision, precision_recall, PrecisionRecall, QueryEvaluation, RetrievalSummary, Metric};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn alternating_ranking_has_ap_five_sixths() {
    assert!((average_precision(&[true, false, true], 2).unwrap() - 5.0 / 6.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn metrics_match_brute_force(seed in any::<u64>(), n in 1usize..60, k_frac in 0.0f64..1.0, p_rel in 0.05f64..0.95) {
        let mut r = rng(seed);
        let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 1).collect();
        ids.shuffle(&mut r);
        let relevant: BTreeSet<u64> = ids.iter().copied().filter(|_| r.random::<f64>() < p_rel).collect();
        let total = relevant.len();
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;

        let pr = precision_recall(&ids[..k], &relevant, total).unwrap();
        let (p, rc) = brute_precision_recall(&ids[..k], &relevant, total);
        prop_assert!((pr.precision - p).abs() <= 1e-12);
        prop_assert!((pr.recall - rc).abs() <= 1e-12);

        if total > 0 {
            let flags: Vec<bool> = ids.iter().map(|id| relevant.contains(id)).collect();
            let ap = average_precision(&flags, total).unwrap();
            prop_assert!((ap - brute_average_precision(&flags, total)).abs() <= 1e-12);
        }
    }

    #[test]
    fn map_is_the_mean_of_brute_force_ap(seed in any::<u64>(), queries in 1usize..12, n in 2usize..30) {
        let mut r = rng(seed);
        let mut evals = Vec::new();
        let mut expected = 0.0;
        for q in 0..queries {
            let mut flags: Vec<bool> = (0..n).map(|_| r.random::<bool>()).collect();
            flags[r.random_range(0..n)] = true;
            let total = flags.iter().filter(|&&f| f).count();
            let ap = brute_average_precision(&flags, total);
            expected += ap / queries as f64;
            evals.push(QueryEvaluation {
                query_id: q as u64,
                label: 0,
                at_k: PrecisionRecall { tp: 0, fp: 1, fn_: total, precision: 0.0, recall: 0.0 },
                average_precision: average_precision(&flags, total).unwrap(),
                precision_curve: vec![0.0],
                recall_curve: vec![0.0],
            });
        }
        let summary = RetrievalSummary::from_queries(0, 1, 1, Metric::Euclidean, evals);
        prop_assert!((summary.map - expected).abs() <= 1e-12);
    }
}
