//! Multi-threaded evaluation over whole test sets.
//!
//! Queries are independent, so they fan out across a rayon pool; results are
//! collected back in query order and therefore match a sequential run
//! exactly.

use rayon::prelude::*;

use mnse_core::dataset::MultiModalDataset;
use mnse_core::eval::{self, Metric, RetrievalSummary, SearchMode};
use mnse_core::optimizer::EmbeddingModel;

/// Threads to use: `MNSE_THREADS` when set to a positive number, otherwise
/// rayon's default.
pub fn thread_count() -> usize {
    std::env::var("MNSE_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not build a thread pool ({e}); running on the global pool");
            f()
        }
    }
}

/// Misclassification percentage per modality.
pub fn misclassification(
    model: &EmbeddingModel,
    test: &MultiModalDataset,
    mode: SearchMode,
) -> mnse_core::Result<Vec<f64>> {
    eval::check_test_set(model, test)?;
    with_pool(|| {
        (0..test.num_modalities())
            .map(|v| {
                let m = test.modality(v);
                let predicted = (0..m.len())
                    .into_par_iter()
                    .map(|row| eval::classify(model, &m.observation(row), v, mode))
                    .collect::<mnse_core::Result<Vec<_>>>()?;
                eval::percent_wrong(&predicted, &test.modality_labels(v))
            })
            .collect()
    })
}

/// Retrieval statistics for one direction `v → u`.
pub fn retrieval(
    model: &EmbeddingModel,
    test: &MultiModalDataset,
    v: usize,
    u: usize,
    k: usize,
    metric: Metric,
) -> mnse_core::Result<RetrievalSummary> {
    eval::check_test_set(model, test)?;
    let m = test.modality(v);
    let labels = test.modality_labels(v);
    let queries = with_pool(|| {
        (0..m.len())
            .into_par_iter()
            .map(|row| eval::evaluate_query(model, &m.observation(row), m.ids()[row], labels[row], v, u, k, metric))
            .collect::<mnse_core::Result<Vec<_>>>()
    })?;
    Ok(RetrievalSummary::from_queries(v, u, k, metric, queries))
}
