//! JSON model files.
//!
//! Every float is written with 17 significant digits so a saved model
//! reloads to bit-identical doubles. Matrices are row-major nested arrays.

use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use mnse_core::kernel::{JitterLadder, RbfInterpolator};
use mnse_core::optimizer::{
    EmbeddingModel, HyperParams, ModalityEmbedding, ObjectiveTrace, SigmaGrid, TraceEntry, Weights,
};
use mnse_core::{DMatrix, SampleId};

pub const FORMAT: &str = "mnse-model";
pub const VERSION: u32 = 1;

/// A double written as a 17-significant-digit literal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exact(pub f64);

impl Serialize for Exact {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom(format!("non-finite value {}", self.0)));
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Exact {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(Exact)
    }
}

fn exacts(xs: &[f64]) -> Vec<Exact> {
    xs.iter().copied().map(Exact).collect()
}

fn plain(xs: &[Exact]) -> Vec<f64> {
    xs.iter().map(|x| x.0).collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<Exact>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| Exact(m[(i, j)])).collect())
        .collect()
}

fn matrix(rows: &[Vec<Exact>], cols_if_empty: usize, what: &str) -> Result<DMatrix<f64>, String> {
    let cols = rows.first().map_or(cols_if_empty, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(format!("{what}: rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j].0))
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsFile {
    mu1: Exact,
    mu2: Exact,
    mu3: Exact,
    mu4: Exact,
    mu5: Exact,
}

#[derive(Debug, Serialize, Deserialize)]
struct HyperFile {
    weights: WeightsFile,
    dim: Option<usize>,
    sigma_grid_count: usize,
    sigma_grid_min: Exact,
    sigma_grid_max: Exact,
    initial_sigma: Option<Vec<Exact>>,
    theta: Option<Vec<Exact>>,
    max_iters: usize,
    tol: Exact,
    jitter_ladder: Vec<Exact>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModalityFile {
    sigma: Exact,
    jitter: Exact,
    ids: Vec<SampleId>,
    labels: Vec<usize>,
    features: Vec<Vec<Exact>>,
    embedding: Vec<Vec<Exact>>,
    coefficients: Vec<Vec<Exact>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceEntryFile {
    iteration: usize,
    after_y: Exact,
    after_sigma: Exact,
    sigma: Vec<Exact>,
    y_step_accepted: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceFile {
    indefinite: bool,
    entries: Vec<TraceEntryFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct ModelFile {
    format: String,
    version: u32,
    V: usize,
    M: usize,
    d: usize,
    hyperparams: HyperFile,
    modalities: Vec<ModalityFile>,
    eigenvalues: Vec<Exact>,
    non_unique: bool,
    trace: TraceFile,
}

pub fn to_json(model: &EmbeddingModel) -> Result<String, String> {
    let hp = model.hyper();
    let w = &hp.weights;
    let file = ModelFile {
        format: FORMAT.into(),
        version: VERSION,
        V: model.num_modalities(),
        M: model.num_classes(),
        d: model.dim(),
        hyperparams: HyperFile {
            weights: WeightsFile {
                mu1: Exact(w.mu1),
                mu2: Exact(w.mu2),
                mu3: Exact(w.mu3),
                mu4: Exact(w.mu4),
                mu5: Exact(w.mu5),
            },
            dim: hp.dim,
            sigma_grid_count: hp.sigma_grid.count,
            sigma_grid_min: Exact(hp.sigma_grid.min_factor),
            sigma_grid_max: Exact(hp.sigma_grid.max_factor),
            initial_sigma: hp.initial_sigma.as_deref().map(exacts),
            theta: hp.theta.as_deref().map(exacts),
            max_iters: hp.max_iters,
            tol: Exact(hp.tol),
            jitter_ladder: exacts(&hp.jitter.0),
        },
        modalities: model
            .modalities()
            .iter()
            .map(|m| {
                let f = m.interpolator();
                ModalityFile {
                    sigma: Exact(f.sigma()),
                    jitter: Exact(f.jitter()),
                    ids: m.ids().to_vec(),
                    labels: m.labels().to_vec(),
                    features: rows(f.features()),
                    embedding: rows(f.embedding()),
                    coefficients: rows(f.coefficients()),
                }
            })
            .collect(),
        eigenvalues: exacts(model.eigenvalues()),
        non_unique: model.non_unique(),
        trace: TraceFile {
            indefinite: model.trace().indefinite,
            entries: model
                .trace()
                .entries
                .iter()
                .map(|e| TraceEntryFile {
                    iteration: e.iteration,
                    after_y: Exact(e.after_y),
                    after_sigma: Exact(e.after_sigma),
                    sigma: exacts(&e.sigma),
                    y_step_accepted: e.y_step_accepted,
                })
                .collect(),
        },
    };
    let mut text = serde_json::to_string(&file).map_err(|e| e.to_string())?;
    text.push('\n');
    Ok(text)
}

pub fn from_json(text: &str) -> Result<EmbeddingModel, String> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| format!("malformed model file: {e}"))?;
    if file.format != FORMAT {
        return Err(format!("not a model file (format `{}`)", file.format));
    }
    if file.version != VERSION {
        return Err(format!("unsupported model version {}", file.version));
    }
    if file.modalities.len() != file.V {
        return Err(format!("V = {} but {} modalities stored", file.V, file.modalities.len()));
    }
    let h = &file.hyperparams;
    let hyper = HyperParams {
        weights: Weights {
            mu1: h.weights.mu1.0,
            mu2: h.weights.mu2.0,
            mu3: h.weights.mu3.0,
            mu4: h.weights.mu4.0,
            mu5: h.weights.mu5.0,
        },
        dim: h.dim,
        sigma_grid: SigmaGrid {
            count: h.sigma_grid_count,
            min_factor: h.sigma_grid_min.0,
            max_factor: h.sigma_grid_max.0,
        },
        initial_sigma: h.initial_sigma.as_deref().map(plain),
        theta: h.theta.as_deref().map(plain),
        max_iters: h.max_iters,
        tol: h.tol.0,
        jitter: JitterLadder(plain(&h.jitter_ladder)),
    };
    let modalities = file
        .modalities
        .iter()
        .enumerate()
        .map(|(v, m)| {
            let what = |part: &str| format!("modality {} {part}", v + 1);
            let features = matrix(&m.features, 0, &what("features"))?;
            let embedding = matrix(&m.embedding, file.d, &what("embedding"))?;
            let coefficients = matrix(&m.coefficients, file.d, &what("coefficients"))?;
            if embedding.ncols() != file.d {
                return Err(format!("{}: expected {} columns", what("embedding"), file.d));
            }
            let interp = RbfInterpolator::from_parts(features, m.sigma.0, coefficients, embedding, m.jitter.0)
                .map_err(|e| format!("{}: {e}", what("interpolator")))?;
            ModalityEmbedding::new(m.ids.clone(), m.labels.clone(), interp).map_err(|e| format!("{}: {e}", what("data")))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let trace = ObjectiveTrace {
        entries: file
            .trace
            .entries
            .iter()
            .map(|e| TraceEntry {
                iteration: e.iteration,
                after_y: e.after_y.0,
                after_sigma: e.after_sigma.0,
                sigma: plain(&e.sigma),
                y_step_accepted: e.y_step_accepted,
            })
            .collect(),
        indefinite: file.trace.indefinite,
    };
    EmbeddingModel::from_parts(file.M, modalities, hyper, trace, plain(&file.eigenvalues), file.non_unique)
        .map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_literals_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            let text = serde_json::to_string(&Exact(x)).unwrap();
            let back: Exact = serde_json::from_str(&text).unwrap();
            assert_eq!(back.0.to_bits(), x.to_bits(), "{text}");
        }
        assert!(serde_json::to_string(&Exact(f64::NAN)).is_err());
    }
}
