//! Small dense helpers shared by the numerical modules.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::{Error, Result};

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// Squared Euclidean distance between row `i` of `a` and row `j` of `b`.
pub(crate) fn row_sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.ncols() {
        let diff = a[(i, k)] - b[(j, k)];
        acc += diff * diff;
    }
    acc
}

/// Squared Euclidean distance between row `i` of `a` and a free vector.
pub(crate) fn row_vec_sq_dist(a: &DMatrix<f64>, i: usize, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (k, xk) in x.iter().enumerate() {
        let diff = a[(i, k)] - xk;
        acc += diff * diff;
    }
    acc
}

pub(crate) fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    (0..m.ncols()).map(|k| m[(i, k)]).collect()
}

/// Median of a non-empty list; the mean of the two middle values for even
/// lengths.
pub(crate) fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median of all nonzero pairwise row distances, if any exist.
pub(crate) fn median_pairwise_distance(x: &DMatrix<f64>) -> Option<f64> {
    let n = x.nrows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sqrt(row_sq_dist(x, i, x, j));
            if v > 0.0 {
                d.push(v);
            }
        }
    }
    median(d)
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
}

/// `½(M + Mᵀ)`, which is exactly symmetric entrywise.
pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// Cholesky factorization that also rejects numerically singular pivots.
///
/// nalgebra only fails on non-positive pivots; a pivot that survives as
/// rounding noise would otherwise produce a meaningless inverse.
pub(crate) fn guarded_cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let chol = Cholesky::new(m)?;
    let l = chol.l_dirty();
    let floor = (n.max(1) as f64) * f64::EPSILON * scale;
    let ok = (0..n).all(|i| {
        let p = l[(i, i)];
        p.is_finite() && p * p > floor
    });
    ok.then_some(chol)
}

pub(crate) fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}
