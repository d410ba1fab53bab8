//! Evaluation and bound reports as pretty-printed JSON.
//!
//! Each report starts with a `generated_at` line (seconds since the Unix
//! epoch); everything after it is a pure function of the inputs, so two runs
//! with the same inputs differ only in that line.

use serde::Serialize;
use serde_json::Value;

use mnse_core::bounds::BoundReport;
use mnse_core::eval::{RetrievalSummary, SearchMode};

use crate::model_file::Exact;

fn now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn exacts(xs: &[f64]) -> Vec<Exact> {
    xs.iter().copied().map(Exact).collect()
}

#[derive(Debug, Serialize)]
pub struct ClassificationReport {
    generated_at: u64,
    kind: &'static str,
    mode: &'static str,
    test_samples: Vec<usize>,
    misclassification_percent: Vec<Exact>,
}

impl ClassificationReport {
    pub fn new(mode: SearchMode, test_samples: Vec<usize>, percent: &[f64]) -> Self {
        ClassificationReport {
            generated_at: now(),
            kind: "classification",
            mode: mode.name(),
            test_samples,
            misclassification_percent: exacts(percent),
        }
    }
}

#[derive(Debug, Serialize)]
struct QueryRow {
    id: u64,
    label: usize,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    precision: Exact,
    recall: Exact,
    average_precision: Exact,
}

#[derive(Debug, Serialize)]
struct Direction {
    query_modality: usize,
    target_modality: usize,
    map: Exact,
    precision_at_k: Vec<Exact>,
    recall_at_k: Vec<Exact>,
    queries: Vec<QueryRow>,
}

#[derive(Debug, Serialize)]
pub struct RetrievalReport {
    generated_at: u64,
    kind: &'static str,
    metric: &'static str,
    k: usize,
    directions: Vec<Direction>,
}

impl RetrievalReport {
    /// Modalities are reported 1-based, as in dataset file names.
    pub fn new(k: usize, summaries: &[RetrievalSummary]) -> Self {
        let metric = summaries.first().map_or("cosine", |s| s.metric.name());
        RetrievalReport {
            generated_at: now(),
            kind: "retrieval",
            metric,
            k,
            directions: summaries
                .iter()
                .map(|s| Direction {
                    query_modality: s.query_modality + 1,
                    target_modality: s.target_modality + 1,
                    map: Exact(s.map),
                    precision_at_k: exacts(&s.precision_at),
                    recall_at_k: exacts(&s.recall_at),
                    queries: s
                        .queries
                        .iter()
                        .map(|q| QueryRow {
                            id: q.query_id,
                            label: q.label,
                            tp: q.at_k.tp,
                            fp: q.at_k.fp,
                            fn_: q.at_k.fn_,
                            precision: Exact(q.at_k.precision),
                            recall: Exact(q.at_k.recall),
                            average_precision: Exact(q.average_precision),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
struct ParamsRow {
    eta: Exact,
    r_delta: Exact,
    gamma: Exact,
    delta: Exact,
    epsilon: Exact,
    q: usize,
    d: usize,
    lipschitz: Vec<Exact>,
    l: Exact,
    ball_measure: Vec<Exact>,
    n_per_class: Vec<usize>,
    v: usize,
}

#[derive(Debug, Serialize)]
struct RetrievalFloorRow {
    k: usize,
    q: usize,
    n_m: usize,
    precision: Exact,
    recall: Exact,
}

#[derive(Debug, Serialize)]
struct MonteCarloRow {
    trials: usize,
    correct_rate: Vec<Vec<Exact>>,
    min_correct_rate: Exact,
    threshold: Exact,
    passed: bool,
    k: usize,
    mean_precision: Exact,
    min_precision: Exact,
    mean_recall: Exact,
    retrieval_queries: usize,
}

#[derive(Debug, Serialize)]
pub struct BoundsReport {
    generated_at: u64,
    kind: &'static str,
    params: ParamsRow,
    condition_holds: bool,
    slack: Exact,
    classification_floor: Exact,
    neighborhood_floor: Exact,
    vacuous: bool,
    ball_measure_kind: &'static str,
    grid_points: usize,
    grid_points_holding: usize,
    empirical_q: usize,
    retrieval: Option<RetrievalFloorRow>,
    monte_carlo: Option<MonteCarloRow>,
}

impl BoundsReport {
    pub fn new(r: &BoundReport) -> Self {
        let p = &r.params;
        BoundsReport {
            generated_at: now(),
            kind: "bounds",
            params: ParamsRow {
                eta: Exact(p.eta),
                r_delta: Exact(p.r_delta),
                gamma: Exact(p.gamma),
                delta: Exact(p.delta),
                epsilon: Exact(p.epsilon),
                q: p.q,
                d: p.d,
                lipschitz: exacts(&p.lipschitz),
                l: Exact(p.l),
                ball_measure: exacts(&p.ball_measure),
                n_per_class: p.n_per_class.clone(),
                v: p.v,
            },
            condition_holds: r.condition_holds,
            slack: Exact(r.slack),
            classification_floor: Exact(r.classification_floor),
            neighborhood_floor: Exact(r.neighborhood_floor),
            vacuous: r.vacuous,
            ball_measure_kind: r.ball_measure_kind,
            grid_points: r.grid_points,
            grid_points_holding: r.grid_points_holding,
            empirical_q: r.empirical_q,
            retrieval: r.retrieval.map(|f| RetrievalFloorRow {
                k: f.k,
                q: f.q,
                n_m: f.n_m,
                precision: Exact(f.precision),
                recall: Exact(f.recall),
            }),
            monte_carlo: r.monte_carlo.as_ref().map(|m| MonteCarloRow {
                trials: m.trials,
                correct_rate: m.correct_rate.iter().map(|row| exacts(row)).collect(),
                min_correct_rate: Exact(m.min_correct_rate),
                threshold: Exact(m.threshold),
                passed: m.passed,
                k: m.k,
                mean_precision: Exact(m.mean_precision),
                min_precision: Exact(m.min_precision),
                mean_recall: Exact(m.mean_recall),
                retrieval_queries: m.retrieval_queries,
            }),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn render<T: Serialize>(report: &T) -> Result<String, String> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    text.push('\n');
    Ok(text)
}

/// The report without its `generated_at` line, for comparing runs.
pub fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("\"generated_at\""))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value, String> {
    v.get(key).ok_or_else(|| format!("missing field `{key}`"))
}

fn number_in(v: &Value, key: &str, lo: f64, hi: f64) -> Result<f64, String> {
    let x = field(v, key)?
        .as_f64()
        .ok_or_else(|| format!("`{key}` is not a number"))?;
    if !(lo..=hi).contains(&x) {
        return Err(format!("`{key}` = {x} outside [{lo}, {hi}]"));
    }
    Ok(x)
}

fn numbers_in(v: &Value, key: &str, lo: f64, hi: f64) -> Result<(), String> {
    let arr = field(v, key)?
        .as_array()
        .ok_or_else(|| format!("`{key}` is not an array"))?;
    for x in arr {
        let x = x.as_f64().ok_or_else(|| format!("`{key}` holds a non-number"))?;
        if !(lo..=hi).contains(&x) {
            return Err(format!("`{key}` value {x} outside [{lo}, {hi}]"));
        }
    }
    Ok(())
}

fn uint(v: &Value, key: &str) -> Result<u64, String> {
    field(v, key)?
        .as_u64()
        .ok_or_else(|| format!("`{key}` is not a non-negative integer"))
}

fn boolean(v: &Value, key: &str) -> Result<bool, String> {
    field(v, key)?
        .as_bool()
        .ok_or_else(|| format!("`{key}` is not a boolean"))
}

/// Structural and range check of any report this crate writes.
pub fn check_report(text: &str) -> Result<(), String> {
    let v: Value = serde_json::from_str(text).map_err(|e| format!("not JSON: {e}"))?;
    uint(&v, "generated_at")?;
    let kind = field(&v, "kind")?.as_str().ok_or("`kind` is not a string")?;
    match kind {
        "classification" => {
            let mode = field(&v, "mode")?.as_str().ok_or("`mode` is not a string")?;
            if !matches!(mode, "all" | "own") {
                return Err(format!("unknown mode `{mode}`"));
            }
            numbers_in(&v, "misclassification_percent", 0.0, 100.0)?;
            let n = field(&v, "test_samples")?
                .as_array()
                .ok_or("`test_samples` is not an array")?
                .len();
            if n != field(&v, "misclassification_percent")?.as_array().map_or(0, Vec::len) {
                return Err("one misclassification rate per modality expected".into());
            }
        }
        "retrieval" => {
            let metric = field(&v, "metric")?.as_str().ok_or("`metric` is not a string")?;
            if !matches!(metric, "euclidean" | "cosine") {
                return Err(format!("unknown metric `{metric}`"));
            }
            let k = uint(&v, "k")?;
            for d in field(&v, "directions")?.as_array().ok_or("`directions` is not an array")? {
                uint(d, "query_modality")?;
                uint(d, "target_modality")?;
                number_in(d, "map", 0.0, 1.0)?;
                numbers_in(d, "precision_at_k", 0.0, 1.0)?;
                numbers_in(d, "recall_at_k", 0.0, 1.0)?;
                for q in field(d, "queries")?.as_array().ok_or("`queries` is not an array")? {
                    uint(q, "id")?;
                    uint(q, "label")?;
                    let (tp, fp, fn_) = (uint(q, "tp")?, uint(q, "fp")?, uint(q, "fn")?);
                    if tp + fp != k {
                        return Err(format!("query: tp + fp = {} but k = {k}", tp + fp));
                    }
                    let p = number_in(q, "precision", 0.0, 1.0)?;
                    let r = number_in(q, "recall", 0.0, 1.0)?;
                    number_in(q, "average_precision", 0.0, 1.0)?;
                    let expect_p = tp as f64 / (tp + fp) as f64;
                    let expect_r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
                    if p != expect_p || r != expect_r {
                        return Err("query precision/recall disagree with its counts".into());
                    }
                }
            }
        }
        "bounds" => {
            let p = field(&v, "params")?;
            for key in ["eta", "r_delta", "gamma", "delta", "epsilon", "l"] {
                number_in(p, key, 0.0, f64::MAX)?;
            }
            if uint(p, "q")? < 1 {
                return Err("`q` must be at least 1".into());
            }
            numbers_in(p, "ball_measure", 0.0, 1.0)?;
            numbers_in(p, "lipschitz", 0.0, f64::MAX)?;
            boolean(&v, "condition_holds")?;
            number_in(&v, "slack", f64::MIN, f64::MAX)?;
            number_in(&v, "classification_floor", 0.0, 1.0)?;
            number_in(&v, "neighborhood_floor", 0.0, 1.0)?;
            boolean(&v, "vacuous")?;
            uint(&v, "empirical_q")?;
            let r = field(&v, "retrieval")?;
            if !r.is_null() {
                number_in(r, "precision", 0.0, 1.0)?;
                number_in(r, "recall", 0.0, 1.0)?;
            }
            let mc = field(&v, "monte_carlo")?;
            if !mc.is_null() {
                uint(mc, "trials")?;
                for row in field(mc, "correct_rate")?.as_array().ok_or("`correct_rate` is not an array")? {
                    for x in row.as_array().ok_or("`correct_rate` rows must be arrays")? {
                        let x = x.as_f64().ok_or("`correct_rate` holds a non-number")?;
                        if !(0.0..=1.0).contains(&x) {
                            return Err(format!("correct rate {x} outside [0, 1]"));
                        }
                    }
                }
                number_in(mc, "min_correct_rate", 0.0, 1.0)?;
                boolean(mc, "passed")?;
                number_in(mc, "mean_precision", 0.0, 1.0)?;
                number_in(mc, "mean_recall", 0.0, 1.0)?;
            }
        }
        other => return Err(format!("unknown report kind `{other}`")),
    }
    Ok(())
}
