//! Gaussian RBF kernels and interpolators.
//!
//! An interpolator of modality `v` maps a feature vector `x` to
//! `f_k(x) = Σ_i C_ik · exp(−‖x − x_i‖² / σ²)` over the training rows `x_i`,
//! with coefficients fitted so that `f(x_i) = y_i`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::linalg::{check_finite, exp, guarded_cholesky, row_sq_dist, row_vec_sq_dist, sqrt};
use crate::{Error, Result};

/// Relative diagonal jitter values tried, in order, when factorizing a
/// kernel matrix. The absolute jitter is the factor times `mean(diag Ψ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JitterLadder(pub Vec<f64>);

impl Default for JitterLadder {
    fn default() -> Self {
        JitterLadder(alloc::vec![0.0, 1e-12, 1e-10, 1e-8, 1e-6])
    }
}

impl JitterLadder {
    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::param("jitter", "ladder must not be empty"));
        }
        if self.0.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::param("jitter", "ladder entries must be finite and >= 0"));
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::param("sigma", format!("kernel scale must be positive, got {sigma}")))
    }
}

/// `Ψ_ij = exp(−‖x_i − x_j‖² / σ²)`; symmetric with unit diagonal.
pub fn rbf_kernel_matrix(x: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    let n = x.nrows();
    let s2 = sigma * sigma;
    let mut psi = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let k = exp(-row_sq_dist(x, i, x, j) / s2);
            psi[(i, j)] = k;
            psi[(j, i)] = k;
        }
    }
    Ok(psi)
}

/// Cholesky factor of `Ψ + λI` for the smallest ladder jitter that works.
#[derive(Debug, Clone)]
pub struct KernelFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl KernelFactor {
    pub fn new(psi: &DMatrix<f64>, ladder: &JitterLadder) -> Result<Self> {
        if !psi.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "kernel matrix is {}x{}",
                psi.nrows(),
                psi.ncols()
            )));
        }
        let n = psi.nrows();
        let mean_diag = if n == 0 { 1.0 } else { psi.diagonal().sum() / n as f64 };
        let mut last = 0.0;
        for &f in &ladder.0 {
            let jitter = f * mean_diag;
            last = jitter;
            let mut shifted = psi.clone();
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
            if let Some(chol) = guarded_cholesky(shifted) {
                return Ok(KernelFactor { chol, jitter });
            }
        }
        Err(Error::SingularKernel { jitter: last })
    }

    /// Absolute jitter `λ` that was added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `(Ψ + λI)⁻¹ B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `(Ψ + λI)⁻²`, by two solves against the factor, symmetrized.
    pub fn inverse_square(&self) -> DMatrix<f64> {
        let n = self.chol.l_dirty().nrows();
        let once = self.chol.solve(&DMatrix::identity(n, n));
        let twice = self.chol.solve(&once);
        crate::linalg::symmetrize(&twice)
    }
}

/// Solves `(Ψ + λI) C = Y` and returns `(C, λ)`.
pub fn fit_coefficients(
    psi: &DMatrix<f64>,
    y: &DMatrix<f64>,
    ladder: &JitterLadder,
) -> Result<(DMatrix<f64>, f64)> {
    if y.nrows() != psi.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "kernel has {} rows but embedding has {}",
            psi.nrows(),
            y.nrows()
        )));
    }
    let factor = KernelFactor::new(psi, ladder)?;
    let c = factor.solve(y);
    check_finite(&c, "interpolator coefficients")?;
    Ok((c, factor.jitter()))
}

/// `L = √2 · e^{−1/2} · √N · σ⁻¹ · ‖C‖_F`, a Lipschitz constant of the
/// interpolator with `N` centers, scale `σ` and coefficients `C`.
pub fn lipschitz_constant(n: usize, sigma: f64, c: &DMatrix<f64>) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(core::f64::consts::SQRT_2 * exp(-0.5) * sqrt(n as f64) / sigma * c.norm())
}

/// Fitted Gaussian RBF interpolator of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfInterpolator {
    features: DMatrix<f64>,
    sigma: f64,
    coefficients: DMatrix<f64>,
    embedding: DMatrix<f64>,
    jitter: f64,
}

impl RbfInterpolator {
    /// Fits coefficients mapping the training rows `features` to the rows of
    /// `embedding`.
    pub fn fit(
        features: DMatrix<f64>,
        embedding: DMatrix<f64>,
        sigma: f64,
        ladder: &JitterLadder,
    ) -> Result<Self> {
        let psi = rbf_kernel_matrix(&features, sigma)?;
        let (coefficients, jitter) = fit_coefficients(&psi, &embedding, ladder)?;
        Ok(RbfInterpolator {
            features,
            sigma,
            coefficients,
            embedding,
            jitter,
        })
    }

    /// Reassembles a previously fitted interpolator.
    pub fn from_parts(
        features: DMatrix<f64>,
        sigma: f64,
        coefficients: DMatrix<f64>,
        embedding: DMatrix<f64>,
        jitter: f64,
    ) -> Result<Self> {
        check_sigma(sigma)?;
        if coefficients.nrows() != features.nrows() || embedding.shape() != coefficients.shape() {
            return Err(Error::ShapeMismatch(format!(
                "features {:?}, coefficients {:?}, embedding {:?}",
                features.shape(),
                coefficients.shape(),
                embedding.shape()
            )));
        }
        check_finite(&features, "interpolator features")?;
        check_finite(&coefficients, "interpolator coefficients")?;
        check_finite(&embedding, "interpolator embedding")?;
        if !(jitter.is_finite() && jitter >= 0.0) {
            return Err(Error::param("jitter", "must be finite and non-negative"));
        }
        Ok(RbfInterpolator {
            features,
            sigma,
            coefficients,
            embedding,
            jitter,
        })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// Training embedding `Y` the coefficients were fitted to.
    pub fn embedding(&self) -> &DMatrix<f64> {
        &self.embedding
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn num_centers(&self) -> usize {
        self.features.nrows()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "query has dimension {} but the modality has {}",
                x.len(),
                self.input_dim()
            )));
        }
        let s2 = self.sigma * self.sigma;
        let mut out = DVector::zeros(self.output_dim());
        for i in 0..self.num_centers() {
            let phi = exp(-row_vec_sq_dist(&self.features, i, x) / s2);
            for k in 0..out.len() {
                out[k] += self.coefficients[(i, k)] * phi;
            }
        }
        Ok(out)
    }

    pub fn lipschitz_constant(&self) -> f64 {
        lipschitz_constant(self.num_centers(), self.sigma, &self.coefficients)
            .expect("sigma validated at construction")
    }
}
