//! Alternating minimization of the embedding objective
//!
//! ```text
//! tr(Ỹᵀ A Ỹ) + μ₃ Σ_v σ_v⁻²   subject to ỸᵀỸ = I,
//! A = L̃_w − μ₁ L̃_b + μ₂ Ψ̃⁻² + μ₄ L̃_cw − μ₅ L̃_cb,
//! ```
//!
//! over the stacked embedding `Ỹ` and the per-modality kernel scales `σ_v`.
//! With `σ` fixed the minimizer is the bottom-`d` eigenbasis of `A`; with `Ỹ`
//! fixed the problem separates into one scalar search per modality.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dataset::MultiModalDataset;
use crate::graphs::{offsets, quadratic_form, LaplacianSet};
use crate::kernel::{rbf_kernel_matrix, JitterLadder, KernelFactor, RbfInterpolator};
use crate::linalg::{check_finite, median_pairwise_distance, symmetrize};
use crate::{Error, Result, SampleId};

/// Weights `μ₁ … μ₅` of the objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    /// Within-modality between-class separation (subtracted).
    pub mu1: f64,
    /// Interpolator coefficient norm `tr(ỸᵀΨ̃⁻²Ỹ)`.
    pub mu2: f64,
    /// Kernel scale penalty `Σ σ⁻²`.
    pub mu3: f64,
    /// Cross-modal within-class alignment.
    pub mu4: f64,
    /// Cross-modal between-class separation (subtracted).
    pub mu5: f64,
}

impl Weights {
    /// Weights that work well for classification-style problems.
    pub const CLASSIFICATION: Weights = Weights {
        mu1: 100.0,
        mu2: 0.001,
        mu3: 1.0,
        mu4: 100.0,
        mu5: 100.0,
    };

    /// Weights that work well for cross-modal retrieval.
    pub const RETRIEVAL: Weights = Weights {
        mu1: 0.1,
        mu2: 1.0,
        mu3: 1.0,
        mu4: 10.0,
        mu5: 0.1,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("mu3", self.mu3),
            ("mu4", self.mu4),
            ("mu5", self.mu5),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights::CLASSIFICATION
    }
}

/// Log-spaced kernel-scale candidates relative to a per-modality reference
/// scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaGrid {
    pub count: usize,
    pub min_factor: f64,
    pub max_factor: f64,
}

impl Default for SigmaGrid {
    fn default() -> Self {
        SigmaGrid {
            count: 25,
            min_factor: 0.1,
            max_factor: 10.0,
        }
    }
}

impl SigmaGrid {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::param("sigma_grid_count", "must be at least 1"));
        }
        if !(self.min_factor.is_finite() && self.min_factor > 0.0) {
            return Err(Error::param("sigma_grid_min", "must be positive"));
        }
        if !(self.max_factor.is_finite() && self.max_factor >= self.min_factor) {
            return Err(Error::param("sigma_grid_max", "must be >= sigma_grid_min"));
        }
        Ok(())
    }

    pub fn points(&self, reference: f64) -> Vec<f64> {
        if self.count == 1 {
            return alloc::vec![reference * libm::sqrt(self.min_factor * self.max_factor)];
        }
        let lo = libm::log(self.min_factor);
        let hi = libm::log(self.max_factor);
        let step = (hi - lo) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| reference * libm::exp(lo + step * i as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub weights: Weights,
    /// Embedding dimension; `None` means `max(1, M − 1)`.
    pub dim: Option<usize>,
    pub sigma_grid: SigmaGrid,
    /// Initial kernel scales; `None` means the median pairwise distance of
    /// each modality.
    pub initial_sigma: Option<Vec<f64>>,
    /// Within-class affinity scales; `None` uses the graph default.
    pub theta: Option<Vec<f64>>,
    pub max_iters: usize,
    /// Relative objective decrease below which the loop stops.
    pub tol: f64,
    pub jitter: JitterLadder,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams::classification()
    }
}

impl HyperParams {
    pub fn classification() -> Self {
        HyperParams {
            weights: Weights::CLASSIFICATION,
            dim: None,
            sigma_grid: SigmaGrid::default(),
            initial_sigma: None,
            theta: None,
            max_iters: 50,
            tol: 1e-6,
            jitter: JitterLadder::default(),
        }
    }

    pub fn retrieval() -> Self {
        HyperParams {
            weights: Weights::RETRIEVAL,
            ..HyperParams::classification()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.sigma_grid.validate()?;
        self.jitter.validate()?;
        if self.dim == Some(0) {
            return Err(Error::param("dim", "must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::param("tol", "must be positive"));
        }
        for (name, list) in [("initial_sigma", &self.initial_sigma), ("theta", &self.theta)] {
            if let Some(l) = list {
                if l.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err(Error::param(name, "scales must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn resolved_dim(&self, num_classes: usize) -> usize {
        self.dim.unwrap_or_else(|| num_classes.saturating_sub(1).max(1))
    }
}

/// One iteration of the alternating loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub after_y: f64,
    pub after_sigma: f64,
    pub sigma: Vec<f64>,
    /// False when the eigen-solution did not lower the objective below the
    /// previous value (rounding on ill-conditioned `A`) and the previous
    /// embedding was kept.
    pub y_step_accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectiveTrace {
    pub entries: Vec<TraceEntry>,
    /// `A` had a negative eigenvalue at some Y-step, so the objective is not
    /// bounded below by zero.
    pub indefinite: bool,
}

impl ObjectiveTrace {
    /// All recorded objective values in order: Y-step, σ-step, Y-step, ...
    pub fn values(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| [e.after_y, e.after_sigma])
            .collect()
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.values().windows(2).all(|w| w[1] <= w[0] + slack)
    }
}

/// `A = L̃_w − μ₁L̃_b + μ₂Ψ̃⁻² + μ₄L̃_cw − μ₅L̃_cb`, symmetrized.
pub fn build_a(lap: &LaplacianSet, psi_inv_sq: &DMatrix<f64>, w: &Weights) -> Result<DMatrix<f64>> {
    let n = lap.dim();
    if psi_inv_sq.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "Ψ̃⁻² is {}x{}, Laplacians are {n}x{n}",
            psi_inv_sq.nrows(),
            psi_inv_sq.ncols()
        )));
    }
    let a = laplacian_part(lap, w) + psi_inv_sq * w.mu2;
    Ok(symmetrize(&a))
}

/// The Laplacian terms of `A`, everything except the kernel penalty.
pub fn laplacian_part(lap: &LaplacianSet, w: &Weights) -> DMatrix<f64> {
    &lap.within - &lap.between * w.mu1 + &lap.cross_within * w.mu4 - &lap.cross_between * w.mu5
}

/// Bottom-`d` eigenpairs of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpairs {
    /// `N × d`, orthonormal columns.
    pub vectors: DMatrix<f64>,
    /// Ascending.
    pub values: Vec<f64>,
    /// The `d`-th and `(d+1)`-th eigenvalues coincide, so the subspace is not
    /// unique.
    pub boundary_tie: bool,
    /// Smallest eigenvalue of the whole matrix.
    pub min_value: f64,
}

/// Orthonormal eigenvectors of the `d` algebraically smallest eigenvalues.
///
/// Order is ascending eigenvalue; eigenvalues equal to within rounding are
/// ordered by lexicographic comparison of their vectors. Each vector's
/// largest-magnitude component is made positive.
pub fn solve_embedding(a: &DMatrix<f64>, d: usize) -> Result<Eigenpairs> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(Error::ShapeMismatch(format!("A is {}x{}", a.nrows(), a.ncols())));
    }
    if d == 0 || d > n {
        return Err(Error::Precondition(format!("embedding dimension {d} outside 1..={n}")));
    }
    check_finite(a, "A")?;
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigensolver("symmetric eigensolver did not converge".into()))?;

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|k| {
            let mut col: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            fix_sign(&mut col);
            (eig.eigenvalues[k], col)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));

    let scale = pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let tie_tol = 16.0 * f64::EPSILON * scale;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && pairs[end].0 - pairs[end - 1].0 <= tie_tol {
            end += 1;
        }
        if end - start > 1 {
            pairs[start..end].sort_by(|x, y| lexicographic(&x.1, &y.1));
        }
        start = end;
    }

    let boundary_tie = d < n && pairs[d].0 - pairs[d - 1].0 <= tie_tol;
    let vectors = DMatrix::from_fn(n, d, |i, k| pairs[k].1[i]);
    Ok(Eigenpairs {
        vectors,
        values: pairs[..d].iter().map(|p| p.0).collect(),
        boundary_tie,
        min_value: pairs[0].0,
    })
}

fn fix_sign(col: &mut [f64]) {
    let mut best = 0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col.get(best).is_some_and(|v| *v < 0.0) {
        col.iter_mut().for_each(|v| *v = -*v);
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

fn check_sigmas(sigma: &[f64]) -> Result<()> {
    if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::param("sigma", "kernel scales must be positive"));
    }
    Ok(())
}

/// `tr(ỸᵀAỸ) + μ₃ Σ_v σ_v⁻²`.
pub fn objective(
    y: &DMatrix<f64>,
    lap: &LaplacianSet,
    psi_inv_sq: &DMatrix<f64>,
    sigma: &[f64],
    w: &Weights,
) -> Result<f64> {
    check_sigmas(sigma)?;
    if y.nrows() != lap.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding has {} rows, Laplacians are {}x{}",
            y.nrows(),
            lap.dim(),
            lap.dim()
        )));
    }
    let a = build_a(lap, psi_inv_sq, w)?;
    Ok(quadratic_form(&a, y) + w.mu3 * sigma.iter().map(|s| 1.0 / (s * s)).sum::<f64>())
}

/// `Ψ̃⁻²` assembled block by block from each modality's jittered kernel.
pub fn stacked_inverse_square(
    features: &[&DMatrix<f64>],
    sigma: &[f64],
    ladder: &JitterLadder,
) -> Result<DMatrix<f64>> {
    check_sigmas(sigma)?;
    let blocks = features
        .iter()
        .zip(sigma)
        .map(|(x, &s)| {
            let psi = rbf_kernel_matrix(x, s)?;
            Ok(KernelFactor::new(&psi, ladder)?.inverse_square())
        })
        .collect::<Result<Vec<_>>>()?;
    crate::graphs::assemble_block_diagonal(&blocks)
}

/// Penalties above this multiple of `‖B‖_F` drop their direction from the
/// Y-step: the optimum's weight there is below `1/CUTOFF` and the objective
/// changes by a relative amount of the same order.
const PENALTY_CUTOFF: f64 = 1e8;

/// Eigenbasis of one modality's jittered kernel `Ψ + λI = U S Uᵀ`, giving
/// `Ψ⁻² = U S⁻² Uᵀ` without forming it.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    vectors: DMatrix<f64>,
    /// `1/(s_k + λ)²`, or infinity for a numerically non-positive
    /// eigenvalue.
    penalty: Vec<f64>,
}

impl KernelBasis {
    pub fn new(x: &DMatrix<f64>, sigma: f64, ladder: &JitterLadder) -> Result<Self> {
        let psi = rbf_kernel_matrix(x, sigma)?;
        let jitter = KernelFactor::new(&psi, ladder)?.jitter();
        let eig = SymmetricEigen::try_new(psi, f64::EPSILON, 0)
            .ok_or_else(|| Error::Eigensolver("kernel eigensolver did not converge".into()))?;
        let penalty = eig
            .eigenvalues
            .iter()
            .map(|&s| {
                let t = s + jitter;
                if t > 0.0 {
                    1.0 / (t * t)
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        Ok(KernelBasis {
            vectors: eig.eigenvectors,
            penalty,
        })
    }
}

/// Bottom-`d` eigenvectors of `B + μ₂Ψ̃⁻²`, computed in the kernels'
/// eigenbasis.
///
/// There `Ψ̃⁻²` is an exact diagonal, so the large penalties of
/// near-singular kernels never round away the small ones. Directions whose
/// penalty exceeds [`PENALTY_CUTOFF`] times `‖B‖_F` are left out, always
/// keeping at least `d`.
pub fn solve_penalized(b: &DMatrix<f64>, bases: &[KernelBasis], mu2: f64, d: usize) -> Result<Eigenpairs> {
    let n = b.nrows();
    let sizes: Vec<usize> = bases.iter().map(|k| k.vectors.nrows()).collect();
    if sizes.iter().sum::<usize>() != n || !b.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "kernel blocks {sizes:?} do not tile a {}x{} matrix",
            b.nrows(),
            b.ncols()
        )));
    }
    if d == 0 || d > n {
        return Err(Error::Precondition(format!("embedding dimension {d} outside 1..={n}")));
    }
    let u = crate::graphs::assemble_block_diagonal(&bases.iter().map(|k| k.vectors.clone()).collect::<Vec<_>>())?;
    let penalty: Vec<f64> = bases.iter().flat_map(|k| k.penalty.iter().map(|p| p * mu2)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| penalty[i].total_cmp(&penalty[j]).then(i.cmp(&j)));
    let cutoff = PENALTY_CUTOFF * b.norm().max(penalty[order[0]]);
    let mut kept: Vec<usize> = order
        .iter()
        .copied()
        .enumerate()
        .take_while(|&(rank, i)| rank < d || penalty[i] <= cutoff)
        .map(|(_, i)| i)
        .collect();
    if kept.iter().any(|&i| !penalty[i].is_finite()) {
        return Err(Error::SingularKernel { jitter: 0.0 });
    }
    kept.sort_unstable();
    let uk = u.select_columns(&kept);
    let mut m = uk.transpose() * b * &uk;
    for (slot, &i) in kept.iter().enumerate() {
        m[(slot, slot)] += penalty[i];
    }
    let reduced = solve_embedding(&symmetrize(&m), d)?;
    let mut y = uk * &reduced.vectors;
    for mut col in y.column_iter_mut() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        fix_sign(&mut v);
        col.copy_from_slice(&v);
    }
    Ok(Eigenpairs {
        vectors: y,
        ..reduced
    })
}

/// Per-modality σ objective `μ₂‖(Ψ(σ)+λI)⁻¹Y‖_F² + μ₃σ⁻²`.
pub fn sigma_objective(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    sigma: f64,
    mu2: f64,
    mu3: f64,
    ladder: &JitterLadder,
) -> Result<f64> {
    let penalty = mu3 / (sigma * sigma);
    if mu2 == 0.0 {
        return Ok(penalty);
    }
    let psi = rbf_kernel_matrix(x, sigma)?;
    let c = KernelFactor::new(&psi, ladder)?.solve(y);
    Ok(mu2 * c.norm_squared() + penalty)
}

/// Result of the exhaustive σ search of one modality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaChoice {
    pub sigma: f64,
    pub value: f64,
}

/// Exhaustive search of [`sigma_objective`] over `grid ∪ {incumbent}`.
///
/// The incumbent is kept unless a candidate is strictly better; among
/// strictly better candidates with equal value the largest σ wins.
/// Candidates whose kernel cannot be factorized are skipped.
#[allow(clippy::too_many_arguments)]
pub fn optimize_sigma(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    mu2: f64,
    mu3: f64,
    grid: &[f64],
    incumbent: f64,
    ladder: &JitterLadder,
) -> Result<SigmaChoice> {
    if grid.is_empty() {
        return Err(Error::param("sigma_grid", "candidate grid is empty"));
    }
    check_sigmas(grid)?;
    check_sigmas(&[incumbent])?;
    let mut best: Option<SigmaChoice> = sigma_objective(x, y, incumbent, mu2, mu3, ladder)
        .ok()
        .map(|value| SigmaChoice {
            sigma: incumbent,
            value,
        });
    let mut last_err = None;
    for &s in grid {
        if s == incumbent {
            continue;
        }
        match sigma_objective(x, y, s, mu2, mu3, ladder) {
            Ok(value) => {
                let better = match best {
                    None => true,
                    Some(b) if b.sigma == incumbent => value < b.value,
                    Some(b) => value < b.value || (value == b.value && s > b.sigma),
                };
                if better {
                    best = Some(SigmaChoice { sigma: s, value });
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::SingularKernel { jitter: 0.0 }))
}

/// Training embedding and interpolator of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEmbedding {
    ids: Vec<SampleId>,
    labels: Vec<usize>,
    interpolator: RbfInterpolator,
}

impl ModalityEmbedding {
    pub fn new(ids: Vec<SampleId>, labels: Vec<usize>, interpolator: RbfInterpolator) -> Result<Self> {
        if ids.len() != labels.len() || ids.len() != interpolator.num_centers() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids, {} labels, {} interpolator centers",
                ids.len(),
                labels.len(),
                interpolator.num_centers()
            )));
        }
        Ok(ModalityEmbedding {
            ids,
            labels,
            interpolator,
        })
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn interpolator(&self) -> &RbfInterpolator {
        &self.interpolator
    }

    /// `Y^(v)`.
    pub fn embedding(&self) -> &DMatrix<f64> {
        self.interpolator.embedding()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A trained embedding with its interpolators.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    num_classes: usize,
    modalities: Vec<ModalityEmbedding>,
    hyper: HyperParams,
    trace: ObjectiveTrace,
    eigenvalues: Vec<f64>,
    non_unique: bool,
}

impl EmbeddingModel {
    pub fn from_parts(
        num_classes: usize,
        modalities: Vec<ModalityEmbedding>,
        hyper: HyperParams,
        trace: ObjectiveTrace,
        eigenvalues: Vec<f64>,
        non_unique: bool,
    ) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::param("modalities", "model needs at least one modality"));
        }
        let d = modalities[0].interpolator.output_dim();
        if modalities.iter().any(|m| m.interpolator.output_dim() != d) {
            return Err(Error::ShapeMismatch("modalities disagree on embedding dimension".into()));
        }
        if let Some(m) = modalities.iter().flat_map(|m| m.labels.iter()).find(|&&l| l >= num_classes) {
            return Err(Error::param("labels", format!("label {m} outside 0..{num_classes}")));
        }
        Ok(EmbeddingModel {
            num_classes,
            modalities,
            hyper,
            trace,
            eigenvalues,
            non_unique,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn modality(&self, v: usize) -> &ModalityEmbedding {
        &self.modalities[v]
    }

    pub fn modalities(&self) -> &[ModalityEmbedding] {
        &self.modalities
    }

    pub fn dim(&self) -> usize {
        self.modalities[0].interpolator.output_dim()
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn trace(&self) -> &ObjectiveTrace {
        &self.trace
    }

    /// The `d` smallest eigenvalues of `A` at the final Y-step.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Whether the final eigen-subspace was ambiguous (tied boundary
    /// eigenvalue).
    pub fn non_unique(&self) -> bool {
        self.non_unique
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.modalities.iter().map(|m| m.interpolator.sigma()).collect()
    }

    /// Stacked `Ỹ` in modality order.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.modalities.iter().map(|m| m.len()).sum();
        let mut y = DMatrix::zeros(n, self.dim());
        let mut at = 0;
        for m in &self.modalities {
            y.view_mut((at, 0), m.embedding().shape()).copy_from(m.embedding());
            at += m.len();
        }
        y
    }

    /// Largest per-modality Lipschitz constant.
    pub fn lipschitz_constant(&self) -> f64 {
        self.modalities
            .iter()
            .map(|m| m.interpolator.lipschitz_constant())
            .fold(0.0, f64::max)
    }
}

/// Reference kernel scale of a modality: median nonzero pairwise distance,
/// or 1 when every observation coincides.
pub fn reference_scale(x: &DMatrix<f64>) -> f64 {
    median_pairwise_distance(x).unwrap_or(1.0)
}

/// Runs the alternating minimization on `ds` and fits the final
/// interpolators.
pub fn train(ds: &MultiModalDataset, hp: &HyperParams) -> Result<EmbeddingModel> {
    hp.validate()?;
    let nv = ds.num_modalities();
    let w = hp.weights;
    for m in 0..ds.num_classes() {
        if ds.class_ids(m).is_empty() {
            return Err(Error::ClassTooSmall {
                class: m,
                count: 0,
                needed: 1,
            });
        }
    }
    if let Some((v, _)) = ds.modalities().iter().enumerate().find(|(_, m)| m.is_empty()) {
        return Err(Error::Precondition(format!("modality {v} has no training observations")));
    }
    let n = ds.total_observations();
    let d = hp.resolved_dim(ds.num_classes());
    if d > n {
        return Err(Error::Precondition(format!(
            "embedding dimension {d} exceeds {n} training observations"
        )));
    }

    let lap = LaplacianSet::build(ds, hp.theta.as_deref())?;
    let lap_part = laplacian_part(&lap, &w);
    let features: Vec<&DMatrix<f64>> = ds.modalities().iter().map(|m| m.features()).collect();
    let refs: Vec<f64> = features.iter().map(|x| reference_scale(x)).collect();
    let grids: Vec<Vec<f64>> = refs.iter().map(|&r| hp.sigma_grid.points(r)).collect();
    let mut sigma = match &hp.initial_sigma {
        Some(s) if s.len() != nv => {
            return Err(Error::param(
                "initial_sigma",
                format!("{} scales given for {nv} modalities", s.len()),
            ))
        }
        Some(s) => s.clone(),
        None => refs.clone(),
    };
    let offs = offsets(&lap.sizes);
    let block = |y: &DMatrix<f64>, v: usize| -> DMatrix<f64> {
        y.rows(offs[v], lap.sizes[v]).into_owned()
    };
    let value_of = |y: &DMatrix<f64>, sigma: &[f64]| -> Result<f64> {
        let mut total = quadratic_form(&lap_part, y);
        for v in 0..nv {
            total += sigma_objective(features[v], &block(y, v), sigma[v], w.mu2, w.mu3, &hp.jitter)?;
        }
        Ok(total)
    };

    let mut trace = ObjectiveTrace::default();
    let mut current: Option<(DMatrix<f64>, f64)> = None;
    let mut eigen: Option<Eigenpairs> = None;
    for iteration in 1..=hp.max_iters {
        let pairs = if w.mu2 == 0.0 {
            solve_embedding(&symmetrize(&lap_part), d)?
        } else {
            let bases = features
                .iter()
                .zip(&sigma)
                .map(|(x, &s)| KernelBasis::new(x, s, &hp.jitter))
                .collect::<Result<Vec<_>>>()?;
            solve_penalized(&lap_part, &bases, w.mu2, d)?
        };
        if !trace.indefinite && pairs.min_value < -16.0 * f64::EPSILON * lap_part.norm() {
            log::warn!(
                "A is not positive semi-definite (smallest eigenvalue {:.3e}): the \
                 between-class weights mu1/mu5 are large enough that the objective is not \
                 bounded below by zero; descent continues regardless",
                pairs.min_value
            );
            trace.indefinite = true;
        }
        let candidate = value_of(&pairs.vectors, &sigma)?;
        let (y, after_y, accepted) = match current.take() {
            Some((prev_y, prev)) if candidate > prev => (prev_y, prev, false),
            _ => {
                eigen = Some(pairs.clone());
                (pairs.vectors, candidate, true)
            }
        };

        let mut after_sigma = quadratic_form(&lap_part, &y);
        for v in 0..nv {
            let choice = optimize_sigma(
                features[v],
                &block(&y, v),
                w.mu2,
                w.mu3,
                &grids[v],
                sigma[v],
                &hp.jitter,
            )?;
            sigma[v] = choice.sigma;
            after_sigma += choice.value;
        }
        let reference = trace.entries.last().map_or(after_y, |e| e.after_sigma);
        trace.entries.push(TraceEntry {
            iteration,
            after_y,
            after_sigma,
            sigma: sigma.clone(),
            y_step_accepted: accepted,
        });
        current = Some((y, after_sigma));
        let decrease = (reference - after_sigma) / reference.abs().max(f64::MIN_POSITIVE);
        if decrease < hp.tol {
            break;
        }
    }

    let (y, _) = current.expect("at least one iteration runs");
    let eigen = eigen.expect("first Y-step is always accepted");
    let labels_by_modality: Vec<Vec<usize>> = (0..nv).map(|v| ds.modality_labels(v)).collect();
    let modalities = (0..nv)
        .map(|v| {
            let m = ds.modality(v);
            let interp = RbfInterpolator::fit(m.features().clone(), block(&y, v), sigma[v], &hp.jitter)?;
            ModalityEmbedding::new(m.ids().to_vec(), labels_by_modality[v].clone(), interp)
        })
        .collect::<Result<Vec<_>>>()?;
    if eigen.boundary_tie {
        log::warn!("eigenvalues {d} and {} of A coincide; the embedding is not unique", d + 1);
    }
    EmbeddingModel::from_parts(
        ds.num_classes(),
        modalities,
        hp.clone(),
        trace,
        eigen.values,
        eigen.boundary_tie,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthConfig};
    use alloc::vec;
    use nalgebra::{dmatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        g.qr().q()
    }

    #[test]
    fn diagonal_eigen_cases() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let e = solve_embedding(&a, 1).unwrap();
        assert_eq!(e.vectors, dmatrix![0.0; 1.0; 0.0]);
        let e = solve_embedding(&a, 2).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0]);
        assert!((quadratic_form(&a, &e.vectors) - 3.0).abs() < 1e-14);
        assert!(solve_embedding(&a, 4).is_err());
        assert!(solve_embedding(&a, 0).is_err());
    }

    #[test]
    fn tied_eigenvalues_are_flagged_and_deterministic() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 2.0]));
        let e = solve_embedding(&a, 1).unwrap();
        assert!(e.boundary_tie);
        let again = solve_embedding(&a, 1).unwrap();
        assert_eq!(e, again);
        assert!(!solve_embedding(&a, 2).unwrap().boundary_tie);
    }

    #[test]
    fn eigen_trace_beats_random_orthonormal_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = symmetrize(&(&g + g.transpose()));
        let e = solve_embedding(&a, 2).unwrap();
        let best = quadratic_form(&a, &e.vectors);
        assert!((best - e.values.iter().sum::<f64>()).abs() < 1e-10);
        for _ in 0..100 {
            let z = random_orthonormal(&mut rng, 6, 2);
            assert!(best <= quadratic_form(&a, &z) + 1e-10);
        }
        let gram = e.vectors.transpose() * &e.vectors;
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn penalized_solve_matches_dense_on_well_conditioned_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x1 = dmatrix![0.0, 0.0; 1.0, 0.5; 2.5, -1.0; 4.0, 2.0];
        let x2 = dmatrix![0.0; 1.5; 3.0];
        let g = DMatrix::from_fn(7, 7, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = symmetrize(&(&g + g.transpose()));
        let ladder = JitterLadder::default();
        let bases = [
            KernelBasis::new(&x1, 1.0, &ladder).unwrap(),
            KernelBasis::new(&x2, 0.8, &ladder).unwrap(),
        ];
        let inv_sq = stacked_inverse_square(&[&x1, &x2], &[1.0, 0.8], &ladder).unwrap();
        let a = symmetrize(&(&b + &inv_sq * 0.7));
        let dense = solve_embedding(&a, 2).unwrap();
        let fast = solve_penalized(&b, &bases, 0.7, 2).unwrap();
        for (p, q) in dense.values.iter().zip(&fast.values) {
            assert!((p - q).abs() < 1e-9 * p.abs().max(1.0));
        }
        let proj = |y: &DMatrix<f64>| y * y.transpose();
        assert!((proj(&dense.vectors) - proj(&fast.vectors)).norm() < 1e-8);
        let gram = fast.vectors.transpose() * &fast.vectors;
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let a = dmatrix![2.0, 1.0; 1.0, 2.0];
        let e = solve_embedding(&a, 2).unwrap();
        for k in 0..2 {
            let col = e.vectors.column(k);
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
    }

    fn small_lap() -> (MultiModalDataset, LaplacianSet) {
        let ds = generate_synthetic(&SynthConfig {
            per_class: 2,
            num_classes: 2,
            dims: vec![2, 2],
            ..SynthConfig::default()
        })
        .unwrap();
        let lap = LaplacianSet::build(&ds, None).unwrap();
        (ds, lap)
    }

    #[test]
    fn build_a_weight_zeroing() {
        let (_, lap) = small_lap();
        let n = lap.dim();
        let zero = Weights {
            mu1: 0.0,
            mu2: 0.0,
            mu3: 0.0,
            mu4: 0.0,
            mu5: 0.0,
        };
        let a = build_a(&lap, &DMatrix::identity(n, n), &zero).unwrap();
        assert_eq!(a, lap.within);
        let only_mu2 = Weights { mu2: 1.0, ..zero };
        let empty = LaplacianSet {
            within: DMatrix::zeros(n, n),
            ..lap.clone()
        };
        let a = build_a(&empty, &DMatrix::identity(n, n), &only_mu2).unwrap();
        assert_eq!(a, DMatrix::identity(n, n));
        assert!(build_a(&lap, &DMatrix::identity(n + 1, n + 1), &zero).is_err());
    }

    #[test]
    fn build_a_matches_entrywise_sum() {
        let (_, lap) = small_lap();
        let n = lap.dim();
        let p = DMatrix::from_fn(n, n, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let w = Weights {
            mu1: 0.3,
            mu2: 1.7,
            mu3: 2.0,
            mu4: 0.9,
            mu5: 0.4,
        };
        let a = build_a(&lap, &p, &w).unwrap();
        for i in 0..n {
            for j in 0..n {
                let h = lap.within[(i, j)] - 0.3 * lap.between[(i, j)] + 1.7 * p[(i, j)]
                    + 0.9 * lap.cross_within[(i, j)]
                    - 0.4 * lap.cross_between[(i, j)];
                assert!((a[(i, j)] - h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn objective_arithmetic() {
        let (_, lap) = small_lap();
        let n = lap.dim();
        let y = DMatrix::from_fn(n, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let w = Weights {
            mu1: 0.0,
            mu2: 0.0,
            mu3: 1.0,
            mu4: 0.0,
            mu5: 0.0,
        };
        let empty = LaplacianSet {
            within: DMatrix::zeros(n, n),
            ..lap.clone()
        };
        let v = objective(&y, &empty, &DMatrix::zeros(n, n), &[1.0, 2.0], &w).unwrap();
        assert_eq!(v, 1.25);
        let w0 = Weights { mu3: 0.0, ..w };
        let v = objective(&y, &lap, &DMatrix::zeros(n, n), &[1.0, 2.0], &w0).unwrap();
        assert!((v - quadratic_form(&lap.within, &y)).abs() < 1e-15);
        assert!(objective(&y, &lap, &DMatrix::zeros(n, n), &[0.0, 2.0], &w0).is_err());
    }

    #[test]
    fn sigma_search_edge_cases() {
        let x = dmatrix![0.0; 1.0; 2.5];
        let y = dmatrix![0.5; -0.5; 0.1];
        let ladder = JitterLadder::default();
        let grid = SigmaGrid::default().points(1.0);
        let c = optimize_sigma(&x, &y, 0.0, 1.0, &grid, 1.0, &ladder).unwrap();
        assert_eq!(c.sigma, *grid.last().unwrap());
        let c = optimize_sigma(&x, &y, 1.0, 1.0, &[0.7], 0.7, &ladder).unwrap();
        assert_eq!(c.sigma, 0.7);
        // decoupled: nothing strictly better than the incumbent
        let c = optimize_sigma(&x, &y, 0.0, 0.0, &grid, 1.3, &ladder).unwrap();
        assert_eq!(c.sigma, 1.3);
        assert!(optimize_sigma(&x, &y, 1.0, 1.0, &[], 1.0, &ladder).is_err());
    }

    #[test]
    fn sigma_search_matches_fine_grid_oracle() {
        // two points, μ₃ = 0: g(σ) = ‖Ψ(σ)⁻¹Y‖², with Ψ = [[1, k], [k, 1]], k = e^{-1/σ²}
        let x = dmatrix![0.0; 1.0];
        let y = dmatrix![1.0; 0.3];
        let oracle = |s: f64| {
            let k = libm::exp(-1.0 / (s * s));
            let det = 1.0 - k * k;
            let c0 = (y[(0, 0)] - k * y[(1, 0)]) / det;
            let c1 = (y[(1, 0)] - k * y[(0, 0)]) / det;
            c0 * c0 + c1 * c1
        };
        let grid = SigmaGrid {
            count: 12,
            min_factor: 0.2,
            max_factor: 3.0,
        }
        .points(1.0);
        let fine = SigmaGrid {
            count: 111,
            min_factor: 0.2,
            max_factor: 3.0,
        }
        .points(1.0);
        let got = optimize_sigma(&x, &y, 1.0, 0.0, &grid, grid[0], &JitterLadder::default()).unwrap();
        let best_coarse = grid
            .iter()
            .copied()
            .min_by(|a, b| oracle(*a).total_cmp(&oracle(*b)))
            .unwrap();
        assert_eq!(got.sigma, best_coarse);
        // the fine oracle's minimum lies within one coarse step of the answer
        let best_fine = fine
            .iter()
            .copied()
            .min_by(|a, b| oracle(*a).total_cmp(&oracle(*b)))
            .unwrap();
        let step = libm::exp(libm::log(15.0) / 11.0);
        assert!(best_fine / got.sigma <= step && got.sigma / best_fine <= step);
        assert!((got.value - oracle(got.sigma)).abs() < 1e-9 * oracle(got.sigma));
    }

    #[test]
    fn grid_points_are_log_spaced() {
        let g = SigmaGrid::default().points(2.0);
        assert_eq!(g.len(), 25);
        assert!((g[0] - 0.2).abs() < 1e-12);
        assert!((g[24] - 20.0).abs() < 1e-9);
        assert!((g[12] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn train_invariants_on_default_synthetic() {
        let ds = generate_synthetic(&SynthConfig::default()).unwrap();
        let model = train(&ds, &HyperParams::default()).unwrap();
        let y = model.stacked();
        assert_eq!(y.ncols(), 2);
        assert!((y.transpose() * &y - DMatrix::identity(2, 2)).norm() < 1e-8);
        assert!(model.trace().is_monotone(1e-9));
        assert!(model.trace().values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn decoupled_sigma_stops_after_first_iteration() {
        let ds = generate_synthetic(&SynthConfig {
            per_class: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let hp = HyperParams {
            weights: Weights {
                mu2: 0.0,
                mu3: 0.0,
                ..Weights::CLASSIFICATION
            },
            ..HyperParams::default()
        };
        let model = train(&ds, &hp).unwrap();
        assert_eq!(model.trace().entries.len(), 1);
        let e = &model.trace().entries[0];
        assert_eq!(e.after_y, e.after_sigma);
        let refs: Vec<f64> = ds.modalities().iter().map(|m| reference_scale(m.features())).collect();
        assert_eq!(model.sigma(), refs);
    }

    #[test]
    fn single_iteration_cap() {
        let ds = generate_synthetic(&SynthConfig {
            per_class: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let hp = HyperParams {
            max_iters: 1,
            ..HyperParams::default()
        };
        let model = train(&ds, &hp).unwrap();
        assert_eq!(model.trace().entries.len(), 1);
        assert_eq!(model.trace().values().len(), 2);
    }

    #[test]
    fn train_rejects_bad_params() {
        let ds = generate_synthetic(&SynthConfig {
            per_class: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let hp = HyperParams {
            dim: Some(100),
            ..HyperParams::default()
        };
        assert!(matches!(train(&ds, &hp), Err(Error::Precondition(_))));
        let hp = HyperParams {
            tol: 0.0,
            ..HyperParams::default()
        };
        assert!(train(&ds, &hp).is_err());
    }
}
