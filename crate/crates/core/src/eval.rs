//! Nearest-neighbour classification, cross-modal retrieval and the usual
//! retrieval metrics.
//!
//! Every ranking breaks ties by ascending sample ID so results do not depend
//! on storage order.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::dataset::MultiModalDataset;
use crate::linalg::sqrt;
use crate::optimizer::EmbeddingModel;
use crate::{Error, Result, SampleId};

/// Which training embeddings the nearest-neighbour search looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    /// Every modality's training embeddings.
    #[default]
    AllModalities,
    /// Only the training embeddings of the query's own modality.
    OwnModality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    /// Distance ranking, ascending.
    Euclidean,
    /// Cosine similarity ranking, descending.
    #[default]
    Cosine,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

impl SearchMode {
    pub fn name(self) -> &'static str {
        match self {
            SearchMode::AllModalities => "all",
            SearchMode::OwnModality => "own",
        }
    }
}

/// Maps `x` through the interpolator of modality `v`.
pub fn embed(model: &EmbeddingModel, x: &[f64], v: usize) -> Result<DVector<f64>> {
    check_modality(model, v)?;
    model.modality(v).interpolator().evaluate(x)
}

fn check_modality(model: &EmbeddingModel, v: usize) -> Result<()> {
    if v >= model.num_modalities() {
        return Err(Error::param(
            "modality",
            format!("modality {v} outside 0..{}", model.num_modalities()),
        ));
    }
    Ok(())
}

fn sq_dist(y: &DMatrix<f64>, row: usize, q: &DVector<f64>) -> f64 {
    (0..q.len()).map(|k| (y[(row, k)] - q[k]) * (y[(row, k)] - q[k])).sum()
}

/// Label of the training embedding nearest to `q`.
pub fn classify_embedding(
    model: &EmbeddingModel,
    q: &DVector<f64>,
    v: usize,
    mode: SearchMode,
) -> Result<usize> {
    check_modality(model, v)?;
    if q.len() != model.dim() {
        return Err(Error::ShapeMismatch(format!(
            "query embedding has {} coordinates, model has {}",
            q.len(),
            model.dim()
        )));
    }
    let searched: Vec<usize> = match mode {
        SearchMode::AllModalities => (0..model.num_modalities()).collect(),
        SearchMode::OwnModality => alloc::vec![v],
    };
    let mut best: Option<(f64, SampleId, usize)> = None;
    for u in searched {
        let m = model.modality(u);
        for (row, (&id, &label)) in m.ids().iter().zip(m.labels()).enumerate() {
            let d = sq_dist(m.embedding(), row, q);
            let closer = match best {
                None => true,
                Some((bd, bid, _)) => d < bd || (d == bd && id < bid),
            };
            if closer {
                best = Some((d, id, label));
            }
        }
    }
    best.map(|b| b.2)
        .ok_or_else(|| Error::Precondition("model has no training embeddings".into()))
}

/// Nearest-neighbour class of an observation `x` of modality `v`.
pub fn classify(model: &EmbeddingModel, x: &[f64], v: usize, mode: SearchMode) -> Result<usize> {
    let q = embed(model, x, v)?;
    classify_embedding(model, &q, v, mode)
}

/// Per-modality misclassification percentage of an already computed batch.
pub fn percent_wrong(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(100.0 * wrong as f64 / truth.len() as f64)
}

/// Checks that `test` has the model's modalities and feature widths.
pub fn check_test_set(model: &EmbeddingModel, test: &MultiModalDataset) -> Result<()> {
    if test.num_modalities() != model.num_modalities() {
        return Err(Error::ShapeMismatch(format!(
            "test set has {} modalities, model has {}",
            test.num_modalities(),
            model.num_modalities()
        )));
    }
    for v in 0..test.num_modalities() {
        let (a, b) = (test.modality(v).dim(), model.modality(v).interpolator().input_dim());
        if !test.modality(v).is_empty() && a != b {
            return Err(Error::ShapeMismatch(format!(
                "modality {v}: test features have {a} columns, model expects {b}"
            )));
        }
    }
    Ok(())
}

/// Misclassification percentage of every test observation, one value per
/// modality.
pub fn misclassification_rate(
    model: &EmbeddingModel,
    test: &MultiModalDataset,
    mode: SearchMode,
) -> Result<Vec<f64>> {
    check_test_set(model, test)?;
    (0..test.num_modalities())
        .map(|v| {
            let m = test.modality(v);
            let predicted = (0..m.len())
                .map(|row| classify(model, &m.observation(row), v, mode))
                .collect::<Result<Vec<_>>>()?;
            percent_wrong(&predicted, &test.modality_labels(v))
        })
        .collect()
}

/// A ranked prefix of modality-`u` training samples for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_id: Option<SampleId>,
    pub query_modality: usize,
    pub target_modality: usize,
    /// `(training sample ID, score)`; distance ascending or similarity
    /// descending.
    pub ranked: Vec<(SampleId, f64)>,
    pub metric: Metric,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<SampleId> {
        self.ranked.iter().map(|r| r.0).collect()
    }
}

/// Full ranking of the modality-`u` training embeddings against `q`.
pub fn rank_embedding(
    model: &EmbeddingModel,
    q: &DVector<f64>,
    u: usize,
    metric: Metric,
) -> Result<Vec<(SampleId, f64)>> {
    check_modality(model, u)?;
    let m = model.modality(u);
    let y = m.embedding();
    if q.len() != y.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "query embedding has {} coordinates, model has {}",
            q.len(),
            y.ncols()
        )));
    }
    let mut scored: Vec<(SampleId, f64)> = match metric {
        Metric::Euclidean => m
            .ids()
            .iter()
            .enumerate()
            .map(|(row, &id)| (id, sqrt(sq_dist(y, row, q))))
            .collect(),
        Metric::Cosine => {
            let qn = q.norm();
            if qn == 0.0 {
                return Err(Error::UndefinedCosine);
            }
            m.ids()
                .iter()
                .enumerate()
                .map(|(row, &id)| {
                    let r = y.row(row);
                    let rn = r.norm();
                    if rn == 0.0 {
                        return Err(Error::UndefinedCosine);
                    }
                    let dot: f64 = (0..q.len()).map(|k| r[k] * q[k]).sum();
                    Ok((id, dot / (qn * rn)))
                })
                .collect::<Result<_>>()?
        }
    };
    scored.sort_by(|a, b| compare_scored(a, b, metric));
    Ok(scored)
}

/// The `k` best modality-`u` training samples for observation `x` of
/// modality `v`.
pub fn retrieve(
    model: &EmbeddingModel,
    x: &[f64],
    v: usize,
    u: usize,
    k: usize,
    metric: Metric,
) -> Result<RetrievalResult> {
    check_modality(model, u)?;
    let available = model.modality(u).len();
    if k == 0 || k > available {
        return Err(Error::param("k", format!("must lie in 1..={available}, got {k}")));
    }
    let q = embed(model, x, v)?;
    let mut ranked = rank_embedding(model, &q, u, metric)?;
    ranked.truncate(k);
    Ok(RetrievalResult {
        query_id: None,
        query_modality: v,
        target_modality: u,
        ranked,
        metric,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Set-based precision and recall of one retrieved list. With no relevant
/// items at all the recall is reported as 0.
pub fn precision_recall(
    retrieved: &[SampleId],
    relevant: &BTreeSet<SampleId>,
    total_relevant: usize,
) -> Result<PrecisionRecall> {
    if retrieved.is_empty() {
        return Err(Error::param("retrieved", "must not be empty"));
    }
    let tp = retrieved.iter().filter(|id| relevant.contains(id)).count();
    counts_to_pr(tp, retrieved.len() - tp, total_relevant)
}

fn counts_to_pr(tp: usize, fp: usize, total_relevant: usize) -> Result<PrecisionRecall> {
    if total_relevant < tp {
        return Err(Error::param(
            "total_relevant",
            format!("{total_relevant} relevant items but {tp} true positives"),
        ));
    }
    let fn_ = total_relevant - tp;
    Ok(PrecisionRecall {
        tp,
        fp,
        fn_,
        precision: tp as f64 / (tp + fp) as f64,
        recall: if total_relevant == 0 {
            0.0
        } else {
            tp as f64 / total_relevant as f64
        },
    })
}

/// Mean of precision-at-rank over the ranks holding relevant items, divided
/// by the total number of relevant items.
pub fn average_precision(flags: &[bool], total_relevant: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::param("total_relevant", "must be at least 1"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
        hits += 1;
        sum += hits as f64 / (rank + 1) as f64;
    }
    if hits > total_relevant {
        return Err(Error::param(
            "total_relevant",
            format!("{hits} relevant flags exceed the stated total {total_relevant}"),
        ));
    }
    Ok(sum / total_relevant as f64)
}

/// Retrieval statistics of a single query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEvaluation {
    pub query_id: SampleId,
    pub label: usize,
    /// Counts for the top-`k` prefix.
    pub at_k: PrecisionRecall,
    /// Average precision over the full ranking.
    pub average_precision: f64,
    /// Precision at ranks `1..=k`.
    pub precision_curve: Vec<f64>,
    /// Recall at ranks `1..=k`.
    pub recall_curve: Vec<f64>,
}

/// Ranks the whole modality-`u` training set for one labelled query of
/// modality `v` and collects its statistics at depth `k`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_query(
    model: &EmbeddingModel,
    x: &[f64],
    query_id: SampleId,
    label: usize,
    v: usize,
    u: usize,
    k: usize,
    metric: Metric,
) -> Result<QueryEvaluation> {
    check_modality(model, u)?;
    let target = model.modality(u);
    if k == 0 || k > target.len() {
        return Err(Error::param("k", format!("must lie in 1..={}, got {k}", target.len())));
    }
    let total = target.labels().iter().filter(|&&l| l == label).count();
    if total == 0 {
        return Err(Error::Precondition(format!(
            "class {label} has no training samples in modality {u}"
        )));
    }
    let q = embed(model, x, v)?;
    let ranking = rank_embedding(model, &q, u, metric)?;
    let label_of = |id: SampleId| -> usize {
        let row = target.ids().iter().position(|&t| t == id).expect("ranked id is a training id");
        target.labels()[row]
    };
    let flags: Vec<bool> = ranking.iter().map(|(id, _)| label_of(*id) == label).collect();
    let mut precision_curve = Vec::with_capacity(k);
    let mut recall_curve = Vec::with_capacity(k);
    let mut tp = 0;
    for (rank, &f) in flags.iter().take(k).enumerate() {
        tp += usize::from(f);
        precision_curve.push(tp as f64 / (rank + 1) as f64);
        recall_curve.push(tp as f64 / total as f64);
    }
    Ok(QueryEvaluation {
        query_id,
        label,
        at_k: counts_to_pr(tp, k - tp, total)?,
        average_precision: average_precision(&flags, total)?,
        precision_curve,
        recall_curve,
    })
}

/// Aggregated retrieval statistics of one direction `v → u`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSummary {
    pub query_modality: usize,
    pub target_modality: usize,
    pub k: usize,
    pub metric: Metric,
    pub map: f64,
    /// Mean precision at ranks `1..=k`.
    pub precision_at: Vec<f64>,
    /// Mean recall at ranks `1..=k`.
    pub recall_at: Vec<f64>,
    pub queries: Vec<QueryEvaluation>,
}

impl RetrievalSummary {
    /// Combines per-query results, kept in the given order.
    pub fn from_queries(
        query_modality: usize,
        target_modality: usize,
        k: usize,
        metric: Metric,
        queries: Vec<QueryEvaluation>,
    ) -> Self {
        let n = queries.len().max(1) as f64;
        let mean_curve = |pick: fn(&QueryEvaluation) -> &Vec<f64>| -> Vec<f64> {
            (0..k)
                .map(|i| queries.iter().map(|q| pick(q)[i]).sum::<f64>() / n)
                .collect()
        };
        RetrievalSummary {
            query_modality,
            target_modality,
            k,
            metric,
            map: queries.iter().map(|q| q.average_precision).sum::<f64>() / n,
            precision_at: mean_curve(|q| &q.precision_curve),
            recall_at: mean_curve(|q| &q.recall_curve),
            queries,
        }
    }
}

/// Retrieval statistics of every modality-`v` test observation against the
/// modality-`u` training set.
pub fn retrieval_summary(
    model: &EmbeddingModel,
    test: &MultiModalDataset,
    v: usize,
    u: usize,
    k: usize,
    metric: Metric,
) -> Result<RetrievalSummary> {
    check_test_set(model, test)?;
    let m = test.modality(v);
    let labels = test.modality_labels(v);
    let queries = (0..m.len())
        .map(|row| evaluate_query(model, &m.observation(row), m.ids()[row], labels[row], v, u, k, metric))
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrievalSummary::from_queries(v, u, k, metric, queries))
}

/// Mean over the modality-`v` test observations of the full-ranking average
/// precision against the modality-`u` training set.
pub fn mean_average_precision(
    model: &EmbeddingModel,
    test: &MultiModalDataset,
    v: usize,
    u: usize,
    metric: Metric,
) -> Result<f64> {
    check_modality(model, u)?;
    Ok(retrieval_summary(model, test, v, u, 1, metric)?.map)
}

/// Ranking order of `(sample ID, score)` pairs: best score first, then
/// ascending ID.
pub fn compare_scored(a: &(SampleId, f64), b: &(SampleId, f64), metric: Metric) -> Ordering {
    match metric {
        Metric::Euclidean => a.1.total_cmp(&b.1),
        Metric::Cosine => b.1.total_cmp(&a.1),
    }
    .then(a.0.cmp(&b.0))
}
