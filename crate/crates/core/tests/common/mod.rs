//! Brute-force reference implementations shared by the integration tests.
//!
//! Everything here is written from the definitions, loop by loop, without
//! calling into the library's numerical code.
#![allow(dead_code)]

use std::collections::BTreeSet;

use mnse_core::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `n × d` matrix with orthonormal columns, by Gram–Schmidt on Gaussian
/// columns (twice, for numerical orthogonality).
pub fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    let mut z = gaussian_matrix(rng, n, d);
    for _pass in 0..2 {
        for j in 0..d {
            for k in 0..j {
                let dot: f64 = (0..n).map(|i| z[(i, j)] * z[(i, k)]).sum();
                for i in 0..n {
                    z[(i, j)] -= dot * z[(i, k)];
                }
            }
            let norm = (0..n).map(|i| z[(i, j)] * z[(i, j)]).sum::<f64>().sqrt();
            for i in 0..n {
                z[(i, j)] /= norm;
            }
        }
    }
    z
}

pub fn sq_dist_rows(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.ncols() {
        let diff = a[(i, k)] - b[(j, k)];
        acc += diff * diff;
    }
    acc
}

pub fn dist_rows(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    sq_dist_rows(a, i, b, j).sqrt()
}

/// `½ Σ_ij W_ij ‖z_i − z_j‖²`, the pairwise form of `tr(Zᵀ L Z)`.
pub fn pairwise_quadratic(w: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += w[(i, j)] * sq_dist_rows(z, i, z, j);
        }
    }
    0.5 * total
}

/// Solves `M X = B` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(m: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut x = b.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[(p, col)].abs().total_cmp(&a[(q, col)].abs()))
            .unwrap();
        a.swap_rows(col, pivot);
        x.swap_rows(col, pivot);
        for r in (col + 1)..n {
            let f = a[(r, col)] / a[(col, col)];
            for c in col..n {
                a[(r, c)] -= f * a[(col, c)];
            }
            for c in 0..x.ncols() {
                x[(r, c)] -= f * x[(col, c)];
            }
        }
    }
    for col in (0..n).rev() {
        for c in 0..x.ncols() {
            let mut s = x[(col, c)];
            for k in (col + 1)..n {
                s -= a[(col, k)] * x[(k, c)];
            }
            x[(col, c)] = s / a[(col, col)];
        }
    }
    x
}

/// `Ψ_ij = exp(−‖x_i − x_j‖² / σ²)`.
pub fn gaussian_kernel(x: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| (-sq_dist_rows(x, i, x, j) / (sigma * sigma)).exp())
}

/// Precision and recall of a retrieved list, by membership tests.
pub fn brute_precision_recall(retrieved: &[u64], relevant: &BTreeSet<u64>, total: usize) -> (f64, f64) {
    let mut hits = 0;
    for id in retrieved {
        if relevant.iter().any(|r| r == id) {
            hits += 1;
        }
    }
    let p = hits as f64 / retrieved.len() as f64;
    let r = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    (p, r)
}

/// Average precision: for every relevant rank, recount the relevant items
/// in the prefix ending there.
pub fn brute_average_precision(flags: &[bool], total: usize) -> f64 {
    let mut sum = 0.0;
    for k in 0..flags.len() {
        if flags[k] {
            let prefix_hits = flags[..=k].iter().filter(|&&f| f).count();
            sum += prefix_hits as f64 / (k + 1) as f64;
        }
    }
    sum / total as f64
}

/// One observation of a sample for the estimator oracles.
#[derive(Debug, Clone)]
pub struct Obs {
    pub modality: usize,
    pub id: u64,
    pub label: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Largest embedding distance between two observations of one sample in
/// different modalities.
pub fn oracle_eta(obs: &[Obs]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for a in obs {
        for b in obs {
            if a.id == b.id && a.modality != b.modality {
                best = best.max(euclid(&a.y, &b.y));
            }
        }
    }
    best
}

/// Largest embedding distance between same-class, same-modality
/// observations whose inputs are within `2δ`.
pub fn oracle_r_delta(obs: &[Obs], delta: f64) -> f64 {
    let mut best = 0.0f64;
    for (p, a) in obs.iter().enumerate() {
        for (q, b) in obs.iter().enumerate() {
            if p != q && a.modality == b.modality && a.label == b.label && euclid(&a.x, &b.x) <= 2.0 * delta {
                best = best.max(euclid(&a.y, &b.y));
            }
        }
    }
    best
}

/// Smallest embedding distance between observations of different classes,
/// across all modalities.
pub fn oracle_gamma(obs: &[Obs]) -> f64 {
    let mut best = f64::INFINITY;
    for a in obs {
        for b in obs {
            if a.label != b.label {
                best = best.min(euclid(&a.y, &b.y));
            }
        }
    }
    best
}

/// Smallest, over modalities and class-`m` centers, fraction of the other
/// class-`m` observations of that modality strictly inside the `δ`-ball.
pub fn oracle_ball_measure(obs: &[Obs], m: usize, delta: f64) -> f64 {
    let mut best = f64::INFINITY;
    for c in obs.iter().filter(|o| o.label == m) {
        let peers: Vec<&Obs> = obs
            .iter()
            .filter(|o| o.label == m && o.modality == c.modality && o.id != c.id)
            .collect();
        let frac = if peers.is_empty() {
            0.0
        } else {
            peers.iter().filter(|o| euclid(&o.x, &c.x) < delta).count() as f64 / peers.len() as f64
        };
        best = best.min(frac);
    }
    best
}
