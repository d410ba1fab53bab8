//! Geometry estimators and generalization bounds for the learned embedding.
//!
//! The classification bound holds when
//!
//! ```text
//! 6Lδ + 2√d ε + 2R_δ + 2η ≤ γ
//! ```
//!
//! where `η` bounds the distance between the embeddings of one sample seen in
//! two modalities, `R_δ` bounds the embedding spread of same-class inputs
//! within `2δ`, `γ` is the margin between classes and `L` is the
//! interpolators' Lipschitz constant. Given enough training samples per class
//! it then gives a floor on the probability of a correct nearest-neighbour
//! decision. The estimators below compute the tightest constants the training
//! data admit.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::dataset::{generate_synthetic, MultiModalDataset, SynthConfig, SyntheticSource, FRESH_STREAM, POOL_STREAM};
use crate::eval::{classify, embed, rank_embedding, Metric, SearchMode};
use crate::linalg::{exp, median, row_sq_dist, sqrt};
use crate::optimizer::{train, EmbeddingModel, HyperParams};
use crate::{Error, Result, SampleId};

/// Training embedding of one modality together with its inputs.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddedModality<'a> {
    pub ids: &'a [SampleId],
    pub labels: &'a [usize],
    pub features: &'a DMatrix<f64>,
    pub embedding: &'a DMatrix<f64>,
}

/// Per-modality views of a trained model's training set.
pub fn views(model: &EmbeddingModel) -> Vec<EmbeddedModality<'_>> {
    model
        .modalities()
        .iter()
        .map(|m| EmbeddedModality {
            ids: m.ids(),
            labels: m.labels(),
            features: m.interpolator().features(),
            embedding: m.embedding(),
        })
        .collect()
}

fn embedding_distance(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    sqrt(row_sq_dist(a, i, b, j))
}

/// Largest distance between the embeddings of one sample observed in two
/// modalities.
pub fn estimate_alignment(views: &[EmbeddedModality<'_>]) -> Result<f64> {
    let index: Vec<BTreeMap<SampleId, usize>> = views
        .iter()
        .map(|m| m.ids.iter().enumerate().map(|(r, &id)| (id, r)).collect())
        .collect();
    let mut eta: Option<f64> = None;
    for v in 0..views.len() {
        for u in (v + 1)..views.len() {
            for (i, id) in views[v].ids.iter().enumerate() {
                if let Some(&j) = index[u].get(id) {
                    let d = embedding_distance(views[v].embedding, i, views[u].embedding, j);
                    eta = Some(eta.map_or(d, |e: f64| e.max(d)));
                }
            }
        }
    }
    eta.ok_or_else(|| Error::Precondition("no sample is observed in two modalities".into()))
}

/// Largest embedding distance between same-class observations of one
/// modality whose inputs lie within `2δ`; 0 when no pair qualifies.
pub fn estimate_compactness(views: &[EmbeddedModality<'_>], delta: f64) -> Result<f64> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::param("delta", "must be positive"));
    }
    let mut r: f64 = 0.0;
    for m in views {
        for i in 0..m.ids.len() {
            for j in (i + 1)..m.ids.len() {
                if m.labels[i] == m.labels[j] && sqrt(row_sq_dist(m.features, i, m.features, j)) <= 2.0 * delta {
                    r = r.max(embedding_distance(m.embedding, i, m.embedding, j));
                }
            }
        }
    }
    Ok(r)
}

/// Smallest embedding distance between observations of different classes,
/// over every pair of modalities including a modality with itself.
pub fn estimate_separation(views: &[EmbeddedModality<'_>]) -> Result<f64> {
    let mut gamma: Option<f64> = None;
    for (v, a) in views.iter().enumerate() {
        for b in &views[v..] {
            for i in 0..a.ids.len() {
                for j in 0..b.ids.len() {
                    if a.labels[i] != b.labels[j] {
                        let d = embedding_distance(a.embedding, i, b.embedding, j);
                        gamma = Some(gamma.map_or(d, |g: f64| g.min(d)));
                    }
                }
            }
        }
    }
    gamma.ok_or_else(|| Error::Precondition("separation needs at least two classes".into()))
}

/// Plug-in estimate of the smallest probability mass of an open `δ`-ball
/// around a class-`m` point: the minimum, over modalities and class-`m`
/// observations as centers, of the fraction of the other class-`m`
/// observations strictly within `δ`. A class with a single observation in
/// some modality gets 0.
pub fn estimate_ball_measure(ds: &MultiModalDataset, m: usize, delta: f64) -> Result<f64> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::param("delta", "must be positive"));
    }
    let mut best: Option<f64> = None;
    for (v, modality) in ds.modalities().iter().enumerate() {
        let rows: Vec<usize> = ds
            .modality_labels(v)
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == m)
            .map(|(r, _)| r)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let x = modality.features();
        for &i in &rows {
            let frac = if rows.len() == 1 {
                0.0
            } else {
                let inside = rows
                    .iter()
                    .filter(|&&j| j != i && sqrt(row_sq_dist(x, i, x, j)) < delta)
                    .count();
                inside as f64 / (rows.len() - 1) as f64
            };
            best = Some(best.map_or(frac, |b: f64| b.min(frac)));
        }
    }
    best.ok_or(Error::ClassTooSmall {
        class: m,
        count: 0,
        needed: 1,
    })
}

/// Verdict of the generalization condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub holds: bool,
    /// `γ − (6Lδ + 2√d ε + 2R_δ + 2η)`.
    pub slack: f64,
}

pub fn check_condition(l: f64, delta: f64, epsilon: f64, d: usize, r_delta: f64, eta: f64, gamma: f64) -> Condition {
    let slack = gamma - (6.0 * l * delta + 2.0 * sqrt(d as f64) * epsilon + 2.0 * r_delta + 2.0 * eta);
    Condition {
        holds: slack >= 0.0,
        slack,
    }
}

/// The three-term failure sum shared by the single-modality and
/// multi-modality floors.
fn failure_sum(n_m: usize, eta_m: f64, q: usize, d: usize, epsilon: f64, l: f64, delta: f64) -> Result<f64> {
    if q == 0 {
        return Err(Error::param("q", "must be at least 1"));
    }
    if !(eta_m > 0.0 && eta_m <= 1.0) {
        return Err(Error::Precondition(format!("ball measure {eta_m} outside (0, 1]")));
    }
    if !(l >= 0.0 && delta >= 0.0 && epsilon >= 0.0) {
        return Err(Error::param("l/delta/epsilon", "must be non-negative"));
    }
    let n = n_m as f64;
    let qf = q as f64;
    if n * eta_m <= qf {
        return Err(Error::Precondition(format!(
            "need N_m > Q/η: N_m = {n_m}, Q = {q}, η = {eta_m}"
        )));
    }
    let concentration = exp(-2.0 * (n * eta_m - qf) * (n * eta_m - qf) / n);
    let ld = l * delta;
    let deviation = if ld == 0.0 {
        0.0
    } else {
        2.0 * d as f64 * exp(-qf * epsilon * epsilon / (2.0 * ld * ld))
    };
    let empty_ball = libm::pow(1.0 - eta_m, qf);
    Ok(concentration + deviation + empty_ball)
}

/// Floor on the probability of classifying a test sample observed in `v`
/// modalities correctly, truncated to `[0, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn classification_bound(
    n_m: usize,
    eta_m: f64,
    q: usize,
    d: usize,
    epsilon: f64,
    l: f64,
    delta: f64,
    v: usize,
) -> Result<f64> {
    if v == 0 {
        return Err(Error::param("v", "must be at least 1"));
    }
    let s = failure_sum(n_m, eta_m, q, d, epsilon, l, delta)?;
    Ok((1.0 - libm::pow(s, v as f64)).clamp(0.0, 1.0))
}

/// Single-modality floor: probability that the `δ`-ball around a test point
/// holds at least `Q` training samples whose embeddings stay within `ε`.
pub fn neighborhood_probability(
    n_m: usize,
    eta_m: f64,
    q: usize,
    d: usize,
    epsilon: f64,
    l: f64,
    delta: f64,
) -> Result<f64> {
    let s = failure_sum(n_m, eta_m, q, d, epsilon, l, delta)?;
    Ok((1.0 - s).clamp(0.0, 1.0))
}

/// `(precision floor, recall floor)` of retrieving `k` items when `q`
/// same-class items are guaranteed to rank first among `n_m`.
pub fn retrieval_guarantee(k: usize, q: usize, n_m: usize) -> Result<(f64, f64)> {
    if k == 0 || q == 0 {
        return Err(Error::param("k/q", "must be at least 1"));
    }
    if k > n_m {
        return Err(Error::param("k", format!("{k} exceeds the {n_m} relevant samples")));
    }
    let n = n_m as f64;
    Ok(if k <= q {
        (1.0, k as f64 / n)
    } else {
        (q as f64 / k as f64, q as f64 / n)
    })
}

/// Parameters the audit sweeps over.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditGrids {
    pub delta: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub q: Vec<usize>,
}

impl AuditGrids {
    /// Eight log-spaced `δ` over `[0.01, 1]` times the median input distance,
    /// `ε ∈ {0.01, 0.1, 0.5, 1}` times the median embedding distance and
    /// `Q ∈ {1, 2, 5, 10}`.
    pub fn default_for(model: &EmbeddingModel) -> Self {
        let vs = views(model);
        let mut input = Vec::new();
        let mut embedded = Vec::new();
        for m in &vs {
            for i in 0..m.ids.len() {
                for j in (i + 1)..m.ids.len() {
                    input.push(sqrt(row_sq_dist(m.features, i, m.features, j)));
                }
            }
        }
        for (v, a) in vs.iter().enumerate() {
            for b in &vs[v..] {
                for i in 0..a.ids.len() {
                    let start = if core::ptr::eq(a.embedding, b.embedding) { i + 1 } else { 0 };
                    for j in start..b.ids.len() {
                        embedded.push(embedding_distance(a.embedding, i, b.embedding, j));
                    }
                }
            }
        }
        let nonzero_median = |d: Vec<f64>| median(d.into_iter().filter(|&x| x > 0.0).collect()).unwrap_or(1.0);
        let din = nonzero_median(input);
        let demb = nonzero_median(embedded);
        let delta = (0..8)
            .map(|i| din * libm::pow(10.0, -2.0 + 2.0 * i as f64 / 7.0))
            .collect();
        AuditGrids {
            delta,
            epsilon: [0.01, 0.1, 0.5, 1.0].iter().map(|f| f * demb).collect(),
            q: vec![1, 2, 5, 10],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta.is_empty() || self.epsilon.is_empty() || self.q.is_empty() {
            return Err(Error::param("grids", "every audit grid needs at least one point"));
        }
        if self.delta.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::param("delta", "grid values must be positive"));
        }
        if self.epsilon.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::param("epsilon", "grid values must be non-negative"));
        }
        if self.q.contains(&0) {
            return Err(Error::param("q", "grid values must be at least 1"));
        }
        Ok(())
    }
}

/// How the audit estimates the ball measure of each class.
#[derive(Debug, Clone, Default)]
pub enum BallMeasure {
    /// Leave-one-out fractions of the training observations.
    #[default]
    PlugIn,
    /// Fractions of a large independent pool drawn from the generator.
    Pool(BallPool),
}

impl BallMeasure {
    pub fn name(&self) -> &'static str {
        match self {
            BallMeasure::PlugIn => "plug-in estimate",
            BallMeasure::Pool(_) => "pool estimate",
        }
    }
}

/// Independent draws per class and modality used as an empirical
/// distribution for ball measures.
#[derive(Debug, Clone)]
pub struct BallPool {
    /// `samples[m][v]`, one row per draw.
    samples: Vec<Vec<DMatrix<f64>>>,
}

impl BallPool {
    pub fn draw(source: &SyntheticSource, size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::param("pool", "pool size must be at least 1"));
        }
        let cfg = source.config();
        let mut rng = SyntheticSource::rng(seed, POOL_STREAM);
        let samples = (0..cfg.num_classes)
            .map(|m| {
                let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(size); cfg.num_modalities];
                for _ in 0..size {
                    for (v, obs) in source.draw(m, &mut rng).into_iter().enumerate() {
                        rows[v].push(obs);
                    }
                }
                rows.iter()
                    .enumerate()
                    .map(|(v, r)| DMatrix::from_fn(size, cfg.dims[v], |i, k| r[i][k]))
                    .collect()
            })
            .collect();
        Ok(BallPool { samples })
    }

    /// For every `δ`: the minimum over modalities and class-`m` training
    /// centers of the pool fraction strictly within `δ`.
    fn measures(&self, ds: &MultiModalDataset, m: usize, deltas: &[f64]) -> Result<Vec<f64>> {
        let pools = self
            .samples
            .get(m)
            .ok_or_else(|| Error::param("class", format!("pool has no class {m}")))?;
        let mut out = vec![f64::INFINITY; deltas.len()];
        for (v, modality) in ds.modalities().iter().enumerate() {
            let pool = &pools[v];
            let labels = ds.modality_labels(v);
            for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l == m) {
                let mut dist: Vec<f64> = (0..pool.nrows())
                    .map(|j| sqrt(row_sq_dist(modality.features(), i, pool, j)))
                    .collect();
                dist.sort_by(f64::total_cmp);
                for (slot, &delta) in out.iter_mut().zip(deltas) {
                    let inside = dist.partition_point(|&d| d < delta);
                    *slot = slot.min(inside as f64 / dist.len() as f64);
                }
            }
        }
        if out.iter().any(|x| x.is_infinite()) {
            return Err(Error::ClassTooSmall {
                class: m,
                count: 0,
                needed: 1,
            });
        }
        Ok(out)
    }
}

/// Everything the bound depends on, at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryParams {
    pub eta: f64,
    pub r_delta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub q: usize,
    pub d: usize,
    /// Per-modality Lipschitz constants.
    pub lipschitz: Vec<f64>,
    /// Their maximum, used in the bound.
    pub l: f64,
    /// Per-class ball-measure estimate.
    pub ball_measure: Vec<f64>,
    /// Per-class number of training samples observed in every modality.
    pub n_per_class: Vec<usize>,
    pub v: usize,
}

/// Floors implied by the retrieval bound at depth `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalFloor {
    pub k: usize,
    pub q: usize,
    pub n_m: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Empirical rates of a Monte Carlo run on fresh draws.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloOutcome {
    pub trials: usize,
    /// `correct_rate[m][v]`: fraction of fresh class-`m` modality-`v`
    /// observations classified correctly.
    pub correct_rate: Vec<Vec<f64>>,
    pub min_correct_rate: f64,
    /// `floor − 3·sqrt(floor·(1 − floor)/trials)`; 0 for a vacuous floor.
    pub threshold: f64,
    pub passed: bool,
    pub k: usize,
    pub mean_precision: f64,
    pub min_precision: f64,
    pub mean_recall: f64,
    pub retrieval_queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub params: GeometryParams,
    pub condition_holds: bool,
    pub slack: f64,
    /// Multi-modality classification floor, minimum over classes.
    pub classification_floor: f64,
    /// Single-modality floor, minimum over classes.
    pub neighborhood_floor: f64,
    /// No grid point produced a positive floor.
    pub vacuous: bool,
    pub ball_measure_kind: &'static str,
    pub grid_points: usize,
    pub grid_points_holding: usize,
    /// Smallest number of same-class training embeddings that rank ahead of
    /// every other-class embedding, over all training queries and modality
    /// pairs.
    pub empirical_q: usize,
    pub retrieval: Option<RetrievalFloor>,
    pub monte_carlo: Option<MonteCarloOutcome>,
}

/// Smallest count, over training observations `i` of modality `v` and
/// target modalities `u`, of same-class modality-`u` embeddings strictly
/// closer to `y_i` than every other-class modality-`u` embedding. The query's
/// own row is skipped when `u = v`.
pub fn empirical_q(views: &[EmbeddedModality<'_>]) -> usize {
    let mut q = usize::MAX;
    for (v, a) in views.iter().enumerate() {
        for (u, b) in views.iter().enumerate() {
            for i in 0..a.ids.len() {
                let mut nearest_other = f64::INFINITY;
                let mut same = Vec::new();
                for j in 0..b.ids.len() {
                    if u == v && i == j {
                        continue;
                    }
                    let d = embedding_distance(a.embedding, i, b.embedding, j);
                    if b.labels[j] == a.labels[i] {
                        same.push(d);
                    } else {
                        nearest_other = nearest_other.min(d);
                    }
                }
                q = q.min(same.iter().filter(|&&d| d < nearest_other).count());
            }
        }
    }
    if q == usize::MAX {
        0
    } else {
        q
    }
}

/// Per-class number of samples observed in every modality of `ds`.
fn complete_counts(ds: &MultiModalDataset) -> Vec<usize> {
    let mut counts = vec![0; ds.num_classes()];
    for (id, &m) in ds.labels() {
        if ds.modalities().iter().all(|x| x.row_of(*id).is_some()) {
            counts[m] += 1;
        }
    }
    counts
}

/// Sweeps `δ`, `ε` and `Q`, and reports the grid point with the largest
/// classification floor; ties, including the all-vacuous case, go to the
/// largest condition slack and then to the earliest grid point.
///
/// `ds` must be the training set the model was fitted on. When `k` is given
/// the retrieval floors at depth `k` are added using the empirical `Q`.
pub fn audit(
    model: &EmbeddingModel,
    ds: &MultiModalDataset,
    grids: &AuditGrids,
    ball: &BallMeasure,
    k: Option<usize>,
) -> Result<BoundReport> {
    grids.validate()?;
    let vs = views(model);
    let nv = model.num_modalities();
    let eta = if nv > 1 { estimate_alignment(&vs)? } else { 0.0 };
    let gamma = estimate_separation(&vs)?;
    let lipschitz: Vec<f64> = model
        .modalities()
        .iter()
        .map(|m| m.interpolator().lipschitz_constant())
        .collect();
    let l = lipschitz.iter().copied().fold(0.0, f64::max);
    let d = model.dim();
    let n_per_class = complete_counts(ds);
    let classes = ds.num_classes();

    // ball[delta index][class]
    let mut measures = vec![vec![0.0; classes]; grids.delta.len()];
    for m in 0..classes {
        let per_delta = match ball {
            BallMeasure::PlugIn => grids
                .delta
                .iter()
                .map(|&delta| estimate_ball_measure(ds, m, delta))
                .collect::<Result<Vec<_>>>()?,
            BallMeasure::Pool(pool) => pool.measures(ds, m, &grids.delta)?,
        };
        for (row, value) in measures.iter_mut().zip(per_delta) {
            row[m] = value;
        }
    }

    let mut best: Option<(f64, f64, BoundReport)> = None;
    let mut holding = 0;
    let mut points = 0;
    for (di, &delta) in grids.delta.iter().enumerate() {
        let r_delta = estimate_compactness(&vs, delta)?;
        for &epsilon in &grids.epsilon {
            let cond = check_condition(l, delta, epsilon, d, r_delta, eta, gamma);
            for &q in &grids.q {
                points += 1;
                let ball_m = &measures[di];
                let sample_ok = (0..classes).all(|m| n_per_class[m] as f64 * ball_m[m] > q as f64);
                let (t1, l1) = if cond.holds && sample_ok {
                    holding += 1;
                    let mut t1: f64 = 1.0;
                    let mut l1: f64 = 1.0;
                    for m in 0..classes {
                        t1 = t1.min(classification_bound(n_per_class[m], ball_m[m], q, d, epsilon, l, delta, nv)?);
                        l1 = l1.min(neighborhood_probability(n_per_class[m], ball_m[m], q, d, epsilon, l, delta)?);
                    }
                    (t1, l1)
                } else {
                    (0.0, 0.0)
                };
                let better = match &best {
                    None => true,
                    Some((bf, bs, _)) => t1 > *bf || (t1 == *bf && cond.slack > *bs),
                };
                if better {
                    let report = BoundReport {
                        params: GeometryParams {
                            eta,
                            r_delta,
                            gamma,
                            delta,
                            epsilon,
                            q,
                            d,
                            lipschitz: lipschitz.clone(),
                            l,
                            ball_measure: ball_m.clone(),
                            n_per_class: n_per_class.clone(),
                            v: nv,
                        },
                        condition_holds: cond.holds,
                        slack: cond.slack,
                        classification_floor: t1,
                        neighborhood_floor: l1,
                        vacuous: t1 <= 0.0,
                        ball_measure_kind: ball.name(),
                        grid_points: 0,
                        grid_points_holding: 0,
                        empirical_q: 0,
                        retrieval: None,
                        monte_carlo: None,
                    };
                    best = Some((t1, cond.slack, report));
                }
            }
        }
    }
    let (_, _, mut report) = best.expect("grids are non-empty");
    report.grid_points = points;
    report.grid_points_holding = holding;
    report.empirical_q = empirical_q(&vs);
    if let Some(k) = k {
        let n_m = (0..nv)
            .flat_map(|u| (0..classes).map(move |m| (u, m)))
            .map(|(u, m)| model.modality(u).labels().iter().filter(|&&l| l == m).count())
            .min()
            .unwrap_or(0);
        let q = report.empirical_q.max(1);
        let (precision, recall) = retrieval_guarantee(k, q, n_m)?;
        report.retrieval = Some(RetrievalFloor {
            k,
            q,
            n_m,
            precision,
            recall,
        });
    }
    Ok(report)
}

/// Knobs of [`monte_carlo_validate`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonteCarloOptions {
    pub trials: usize,
    /// Retrieval depth; defaults to the empirical `Q` clamped to the class
    /// size.
    pub k: Option<usize>,
    /// Size of an independent pool used for the ball measure instead of the
    /// leave-one-out plug-in estimate.
    pub pool: Option<usize>,
    /// Audit grids; defaults to [`AuditGrids::default_for`].
    pub grids: Option<AuditGrids>,
}

/// Trains on data generated from `cfg`, audits the bound and checks it
/// against fresh draws.
pub fn monte_carlo_validate(cfg: &SynthConfig, hp: &HyperParams, opts: &MonteCarloOptions) -> Result<BoundReport> {
    let train_set = generate_synthetic(cfg)?;
    let model = train(&train_set, hp)?;
    monte_carlo_with_model(&model, &train_set, &SyntheticSource::new(cfg)?, opts)
}

/// Monte Carlo check of an already trained model against fresh draws from
/// `source`.
pub fn monte_carlo_with_model(
    model: &EmbeddingModel,
    train_set: &MultiModalDataset,
    source: &SyntheticSource,
    opts: &MonteCarloOptions,
) -> Result<BoundReport> {
    if opts.trials < 100 {
        return Err(Error::param("trials", format!("need at least 100, got {}", opts.trials)));
    }
    let cfg = source.config();
    let ball = match opts.pool {
        Some(size) => BallMeasure::Pool(BallPool::draw(source, size, cfg.seed)?),
        None => BallMeasure::PlugIn,
    };
    let grids = opts.grids.clone().unwrap_or_else(|| AuditGrids::default_for(model));
    let mut report = audit(model, train_set, &grids, &ball, None)?;

    let nv = model.num_modalities();
    let class_size = (0..nv)
        .flat_map(|u| (0..cfg.num_classes).map(move |m| (u, m)))
        .map(|(u, m)| model.modality(u).labels().iter().filter(|&&l| l == m).count())
        .min()
        .unwrap_or(0);
    let k = opts.k.unwrap_or(report.empirical_q).clamp(1, class_size.max(1));
    let (precision_floor, recall_floor) = retrieval_guarantee(k, report.empirical_q.max(1), class_size)?;
    report.retrieval = Some(RetrievalFloor {
        k,
        q: report.empirical_q.max(1),
        n_m: class_size,
        precision: precision_floor,
        recall: recall_floor,
    });

    let mut rng = SyntheticSource::rng(cfg.seed, FRESH_STREAM);
    let mut correct = vec![vec![0usize; nv]; cfg.num_classes];
    let (mut p_sum, mut r_sum, mut p_min, mut queries) = (0.0, 0.0, f64::INFINITY, 0usize);
    for (m, hits) in correct.iter_mut().enumerate() {
        for _ in 0..opts.trials {
            let obs = source.draw(m, &mut rng);
            for v in 0..nv {
                if classify(model, &obs[v], v, SearchMode::AllModalities)? == m {
                    hits[v] += 1;
                }
                let q = embed(model, &obs[v], v)?;
                for u in (0..nv).filter(|&u| u != v || nv == 1) {
                    let target = model.modality(u);
                    let relevant = target.labels().iter().filter(|&&l| l == m).count();
                    let ranked = rank_embedding(model, &q, u, Metric::Euclidean)?;
                    let label_of: BTreeMap<SampleId, usize> =
                        target.ids().iter().copied().zip(target.labels().iter().copied()).collect();
                    let tp = ranked[..k].iter().filter(|(id, _)| label_of[id] == m).count();
                    let p = tp as f64 / k as f64;
                    p_sum += p;
                    p_min = p_min.min(p);
                    r_sum += tp as f64 / relevant.max(1) as f64;
                    queries += 1;
                }
            }
        }
    }
    let trials = opts.trials as f64;
    let correct_rate: Vec<Vec<f64>> = correct
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / trials).collect())
        .collect();
    let min_rate = correct_rate.iter().flatten().copied().fold(1.0, f64::min);
    let floor = report.classification_floor;
    let threshold = if report.vacuous {
        0.0
    } else {
        floor - 3.0 * sqrt(floor * (1.0 - floor) / trials)
    };
    let queries_f = queries.max(1) as f64;
    report.monte_carlo = Some(MonteCarloOutcome {
        trials: opts.trials,
        correct_rate,
        min_correct_rate: min_rate,
        threshold,
        passed: report.vacuous || min_rate >= threshold,
        k,
        mean_precision: p_sum / queries_f,
        min_precision: if queries == 0 { 0.0 } else { p_min },
        mean_recall: r_sum / queries_f,
        retrieval_queries: queries,
    });
    Ok(report)
}

/// Draws `per_class` fresh samples of every class on the fresh-draw stream;
/// IDs continue after the training IDs so they never collide.
pub fn fresh_test_set(cfg: &SynthConfig, per_class: usize) -> Result<MultiModalDataset> {
    let source = SyntheticSource::new(cfg)?;
    let mut rng = SyntheticSource::rng(cfg.seed, FRESH_STREAM);
    let offset = (cfg.num_classes * cfg.per_class) as SampleId;
    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); cfg.num_modalities];
    let mut labels = BTreeMap::new();
    let mut ids = Vec::new();
    for m in 0..cfg.num_classes {
        for i in 0..per_class {
            let id = offset + (m * per_class + i) as SampleId;
            labels.insert(id, m);
            ids.push(id);
            for (v, obs) in source.draw(m, &mut rng).into_iter().enumerate() {
                rows[v].push(obs);
            }
        }
    }
    let modalities = rows
        .iter()
        .enumerate()
        .map(|(v, r)| (DMatrix::from_fn(r.len(), cfg.dims[v], |i, k| r[i][k]), ids.clone()))
        .collect();
    MultiModalDataset::new(cfg.num_classes, modalities, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn condition_cases() {
        let c = check_condition(0.0, 1.0, 0.0, 1, 0.0, 0.0, 1.0);
        assert!(c.holds && c.slack == 1.0);
        let c = check_condition(1.0, 1.0, 0.0, 1, 0.0, 0.0, 5.0);
        assert!(!c.holds && c.slack == -1.0);
        let c = check_condition(0.0, 1.0, 0.25, 4, 0.0, 0.0, 1.0);
        assert!(c.holds && c.slack == 0.0);
    }

    #[test]
    fn retrieval_guarantee_cases() {
        assert_eq!(retrieval_guarantee(5, 10, 100).unwrap(), (1.0, 0.05));
        assert_eq!(retrieval_guarantee(20, 10, 100).unwrap(), (0.5, 0.1));
        assert_eq!(retrieval_guarantee(10, 10, 100).unwrap(), (1.0, 0.1));
        assert!(retrieval_guarantee(101, 10, 100).is_err());
        assert!(retrieval_guarantee(0, 10, 100).is_err());
    }

    #[test]
    fn classification_bound_against_hand_arithmetic() {
        let (n, eta, q, d, eps, l, delta) = (1000usize, 0.2, 10usize, 2usize, 0.5, 1.0, 0.1);
        let a = (-2.0f64 * (1000.0f64 * 0.2 - 10.0).powi(2) / 1000.0).exp();
        let b = 4.0 * (-10.0f64 * 0.25 / (2.0 * 0.01)).exp();
        let c = 0.8f64.powi(10);
        let expected = 1.0 - (a + b + c);
        let got = classification_bound(n, eta, q, d, eps, l, delta, 1).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert_eq!(got, neighborhood_probability(n, eta, q, d, eps, l, delta).unwrap());
        let got2 = classification_bound(n, eta, q, d, eps, l, delta, 2).unwrap();
        assert!((got2 - (1.0 - (a + b + c).powi(2))).abs() < 1e-15);
    }

    #[test]
    fn bound_truncation_and_limits() {
        // failure sum above 1 gives the vacuous floor
        assert_eq!(classification_bound(20, 0.6, 10, 5, 0.01, 10.0, 1.0, 1).unwrap(), 0.0);
        // growing V pushes a sub-unit failure sum towards 1
        let mut last = 0.0;
        for v in 1..8 {
            let f = classification_bound(50, 0.5, 5, 1, 1.0, 1.0, 0.5, v).unwrap();
            assert!(f >= last);
            last = f;
        }
        // Lδ = 0 removes the deviation term
        let f = neighborhood_probability(1000, 1.0, 10, 3, 0.1, 0.0, 0.5).unwrap();
        assert!((f - (1.0 - (-2.0f64 * 990.0 * 990.0 / 1000.0).exp())).abs() < 1e-15);
        // η = 1, N ≫ Q
        let f = neighborhood_probability(100_000, 1.0, 10, 2, 0.5, 1.0, 0.2).unwrap();
        let limit = 1.0 - 4.0 * (-10.0f64 * 0.25 / (2.0 * 0.04)).exp();
        assert!((f - limit).abs() < 1e-12);
        assert!(neighborhood_probability(10, 0.5, 0, 1, 1.0, 1.0, 1.0).is_err());
        assert!(neighborhood_probability(10, 0.5, 5, 1, 1.0, 1.0, 1.0).is_err());
    }

    fn view<'a>(
        ids: &'a [SampleId],
        labels: &'a [usize],
        x: &'a DMatrix<f64>,
        y: &'a DMatrix<f64>,
    ) -> EmbeddedModality<'a> {
        EmbeddedModality {
            ids,
            labels,
            features: x,
            embedding: y,
        }
    }

    #[test]
    fn estimator_examples() {
        let ids = [0u64];
        let labels = [0usize];
        let x = dmatrix![0.0];
        let y1 = dmatrix![0.0, 0.0];
        let y2 = dmatrix![3.0, 4.0];
        let vs = [view(&ids, &labels, &x, &y1), view(&ids, &labels, &x, &y2)];
        assert_eq!(estimate_alignment(&vs).unwrap(), 5.0);
        assert!(estimate_alignment(&vs[..1]).is_err());

        let ids = [0u64, 1];
        let labels = [0usize, 1];
        let x = dmatrix![0.0; 5.0];
        let y = dmatrix![0.0; 1.0];
        let vs = [view(&ids, &labels, &x, &y)];
        assert_eq!(estimate_separation(&vs).unwrap(), 1.0);
        let same = [0usize, 0];
        assert!(estimate_separation(&[view(&ids, &same, &x, &y)]).is_err());

        let x = dmatrix![0.0; 1.0];
        let y = dmatrix![0.0; 0.3];
        let vs = [view(&ids, &same, &x, &y)];
        assert_eq!(estimate_compactness(&vs, 0.5).unwrap(), 0.3);
        assert_eq!(estimate_compactness(&vs, 0.4).unwrap(), 0.0);
    }

    #[test]
    fn ball_measure_examples() {
        let x = dmatrix![0.0; 1.0; 2.0];
        let ds = MultiModalDataset::new(
            1,
            vec![(x, vec![0, 1, 2])],
            [(0, 0), (1, 0), (2, 0)].into_iter().collect(),
        )
        .unwrap();
        assert_eq!(estimate_ball_measure(&ds, 0, 1.5).unwrap(), 0.5);
        assert_eq!(estimate_ball_measure(&ds, 0, 10.0).unwrap(), 1.0);
        assert_eq!(estimate_ball_measure(&ds, 0, 0.5).unwrap(), 0.0);
        // the ball is open
        assert_eq!(estimate_ball_measure(&ds, 0, 1.0).unwrap(), 0.0);
        assert!(estimate_ball_measure(&ds, 1, 1.0).is_err());
    }
}
