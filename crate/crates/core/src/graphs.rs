//! Affinity graphs and their Laplacians over the stacked observation order
//! (all rows of modality 1, then modality 2, and so on).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::dataset::MultiModalDataset;
use crate::linalg::{exp, is_symmetric, median, row_sq_dist, sqrt, symmetrize};
use crate::{Error, Result, SampleId};

/// Cross-modal affinity block between the rows of modality `row_modality`
/// and the rows of modality `col_modality`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub weights: DMatrix<f64>,
    pub row_modality: usize,
    pub col_modality: usize,
    pub row_ids: Vec<SampleId>,
    pub col_ids: Vec<SampleId>,
}

fn check_scale(theta: f64) -> Result<()> {
    if theta.is_finite() && theta > 0.0 {
        Ok(())
    } else {
        Err(Error::param("theta", format!("affinity scale must be positive, got {theta}")))
    }
}

#[inline]
fn gaussian(sq_dist: f64, theta: f64) -> f64 {
    exp(-sq_dist / (theta * theta))
}

/// Gaussian affinities between same-class rows, zero across classes.
/// Self-pairs get weight 1.
pub fn within_class_affinity(
    x: &DMatrix<f64>,
    labels: &[usize],
    theta: f64,
) -> Result<DMatrix<f64>> {
    check_scale(theta)?;
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} rows but {} labels",
            labels.len()
        )));
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, i)] = 1.0;
        for j in (i + 1)..n {
            if labels[i] == labels[j] {
                let a = gaussian(row_sq_dist(x, i, x, j), theta);
                w[(i, j)] = a;
                w[(j, i)] = a;
            }
        }
    }
    Ok(w)
}

/// `W_ij = 1` iff the labels differ.
pub fn between_class_indicator(labels: &[usize]) -> DMatrix<f64> {
    cross_modal_between(labels, labels)
}

/// `W_ij = 1` iff `labels_v[i] != labels_u[j]`.
pub fn cross_modal_between(labels_v: &[usize], labels_u: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(labels_v.len(), labels_u.len(), |i, j| {
        if labels_v[i] != labels_u[j] {
            1.0
        } else {
            0.0
        }
    })
}

/// Same-class affinities between modality `v` rows and modality `u` rows.
///
/// The Gaussian weight uses the distance between the two samples measured in
/// a modality where both are observed: `v` if possible, else `u`, else the
/// lowest-indexed modality containing both. Pairs with no common modality
/// get weight 0.
pub fn cross_modal_within(
    ds: &MultiModalDataset,
    v: usize,
    u: usize,
    theta: f64,
) -> Result<AffinityMatrix> {
    if v == u {
        return Err(Error::Precondition(format!(
            "cross-modal affinity needs two different modalities, got {v} twice"
        )));
    }
    check_scale(theta)?;
    let mv = ds.modality(v);
    let mu = ds.modality(u);
    if mv.is_empty() || mu.is_empty() {
        return Err(Error::Precondition(format!(
            "empty modality in cross-modal pair ({v}, {u})"
        )));
    }
    let lv = ds.modality_labels(v);
    let lu = ds.modality_labels(u);
    let mut w = DMatrix::zeros(mv.len(), mu.len());
    for j in 0..mu.len() {
        let id_j = mu.ids()[j];
        let row_in_v = mv.row_of(id_j);
        for i in 0..mv.len() {
            if lv[i] != lu[j] {
                continue;
            }
            let id_i = mv.ids()[i];
            let sq = if let Some(rj) = row_in_v {
                Some(row_sq_dist(mv.features(), i, mv.features(), rj))
            } else if let Some(ri) = mu.row_of(id_i) {
                Some(row_sq_dist(mu.features(), ri, mu.features(), j))
            } else {
                ds.modalities().iter().find_map(|mr| {
                    let a = mr.row_of(id_i)?;
                    let b = mr.row_of(id_j)?;
                    Some(row_sq_dist(mr.features(), a, mr.features(), b))
                })
            };
            if let Some(sq) = sq {
                w[(i, j)] = gaussian(sq, theta);
            }
        }
    }
    Ok(AffinityMatrix {
        weights: w,
        row_modality: v,
        col_modality: u,
        row_ids: mv.ids().to_vec(),
        col_ids: mu.ids().to_vec(),
    })
}

/// `L = D − W` with `D` the diagonal of row sums.
pub fn laplacian(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_symmetric(w) {
        return Err(Error::Asymmetric);
    }
    let mut l = -w.clone();
    for i in 0..w.nrows() {
        l[(i, i)] += w.row(i).sum();
    }
    Ok(l)
}

/// Places square blocks along the diagonal in the given order.
pub fn assemble_block_diagonal(blocks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if let Some(b) = blocks.iter().find(|b| !b.is_square()) {
        return Err(Error::ShapeMismatch(format!(
            "diagonal block is {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    let n = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), b.shape()).copy_from(b);
        at += b.nrows();
    }
    Ok(out)
}

/// Assembles the stacked cross-modal weight matrix from off-diagonal blocks
/// and returns `(W̃, L̃)`.
///
/// `blocks[(v, u)]` must be `sizes[v] × sizes[u]`; a missing `(u, v)` block
/// is taken as the transpose of `(v, u)`, and pairs missing in both orders
/// are zero. The result is symmetrized as `½(W̃ + W̃ᵀ)`.
pub fn assemble_cross(
    sizes: &[usize],
    blocks: &BTreeMap<(usize, usize), DMatrix<f64>>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let offsets = offsets(sizes);
    let n: usize = sizes.iter().sum();
    let mut w = DMatrix::zeros(n, n);
    for (&(v, u), b) in blocks {
        if v == u || v >= sizes.len() || u >= sizes.len() {
            return Err(Error::ShapeMismatch(format!("invalid cross block index ({v}, {u})")));
        }
        if b.shape() != (sizes[v], sizes[u]) {
            return Err(Error::ShapeMismatch(format!(
                "block ({v}, {u}) is {}x{}, expected {}x{}",
                b.nrows(),
                b.ncols(),
                sizes[v],
                sizes[u]
            )));
        }
        w.view_mut((offsets[v], offsets[u]), b.shape()).copy_from(b);
        if !blocks.contains_key(&(u, v)) {
            w.view_mut((offsets[u], offsets[v]), (sizes[u], sizes[v]))
                .copy_from(&b.transpose());
        }
    }
    let w = symmetrize(&w);
    let l = laplacian(&w)?;
    Ok((w, l))
}

pub(crate) fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    sizes
        .iter()
        .map(|s| {
            let o = acc;
            acc += s;
            o
        })
        .collect()
}

/// Default affinity scale for one modality: the median of the nonzero
/// same-class pairwise distances, falling back to the median of all nonzero
/// distances and then to 1.
pub fn default_theta(x: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let n = x.nrows();
    let mut same = Vec::new();
    let mut all = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sqrt(row_sq_dist(x, i, x, j));
            if d > 0.0 {
                all.push(d);
                if labels[i] == labels[j] {
                    same.push(d);
                }
            }
        }
    }
    median(same).or_else(|| median(all)).unwrap_or(1.0)
}

/// The four stacked Laplacians of the objective, with their weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianSet {
    pub within: DMatrix<f64>,
    pub between: DMatrix<f64>,
    pub cross_within: DMatrix<f64>,
    pub cross_between: DMatrix<f64>,
    pub w_within: DMatrix<f64>,
    pub w_between: DMatrix<f64>,
    pub w_cross_within: DMatrix<f64>,
    pub w_cross_between: DMatrix<f64>,
    /// `(modality, sample id)` of each stacked row.
    pub order: Vec<(usize, SampleId)>,
    pub sizes: Vec<usize>,
    /// Per-modality within-class affinity scales actually used.
    pub theta: Vec<f64>,
}

impl LaplacianSet {
    /// Builds every graph of the objective for `ds`. `theta` overrides the
    /// per-modality affinity scales; the cross-modal scale of a pair is the
    /// mean of the two modalities' scales.
    pub fn build(ds: &MultiModalDataset, theta: Option<&[f64]>) -> Result<Self> {
        let nv = ds.num_modalities();
        let labels: Vec<Vec<usize>> = (0..nv).map(|v| ds.modality_labels(v)).collect();
        let theta: Vec<f64> = match theta {
            Some(t) if t.len() != nv => {
                return Err(Error::param(
                    "theta",
                    format!("{} scales given for {nv} modalities", t.len()),
                ))
            }
            Some(t) => t.to_vec(),
            None => (0..nv)
                .map(|v| default_theta(ds.modality(v).features(), &labels[v]))
                .collect(),
        };

        let mut w_blocks = Vec::with_capacity(nv);
        let mut b_blocks = Vec::with_capacity(nv);
        let mut lw_blocks = Vec::with_capacity(nv);
        let mut lb_blocks = Vec::with_capacity(nv);
        for v in 0..nv {
            let w = within_class_affinity(ds.modality(v).features(), &labels[v], theta[v])?;
            let b = between_class_indicator(&labels[v]);
            lw_blocks.push(laplacian(&w)?);
            lb_blocks.push(laplacian(&b)?);
            w_blocks.push(w);
            b_blocks.push(b);
        }

        let sizes: Vec<usize> = ds.modalities().iter().map(|m| m.len()).collect();
        let mut cw = BTreeMap::new();
        let mut cb = BTreeMap::new();
        for v in 0..nv {
            for u in 0..nv {
                if v == u || sizes[v] == 0 || sizes[u] == 0 {
                    continue;
                }
                let t = 0.5 * (theta[v] + theta[u]);
                cw.insert((v, u), cross_modal_within(ds, v, u, t)?.weights);
                cb.insert((v, u), cross_modal_between(&labels[v], &labels[u]));
            }
        }
        let (w_cross_within, cross_within) = assemble_cross(&sizes, &cw)?;
        let (w_cross_between, cross_between) = assemble_cross(&sizes, &cb)?;

        let order = ds
            .modalities()
            .iter()
            .enumerate()
            .flat_map(|(v, m)| m.ids().iter().map(move |&id| (v, id)))
            .collect();

        Ok(LaplacianSet {
            within: assemble_block_diagonal(&lw_blocks)?,
            between: assemble_block_diagonal(&lb_blocks)?,
            cross_within,
            cross_between,
            w_within: assemble_block_diagonal(&w_blocks)?,
            w_between: assemble_block_diagonal(&b_blocks)?,
            w_cross_within,
            w_cross_between,
            order,
            sizes,
            theta,
        })
    }

    pub fn dim(&self) -> usize {
        self.within.nrows()
    }
}

/// `tr(Zᵀ L Z)`.
pub fn quadratic_form(l: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    (z.transpose() * l * z).trace()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthConfig, Warp};
    use alloc::vec;
    use nalgebra::dmatrix;

    #[test]
    fn within_class_weights() {
        let x = dmatrix![0.0, 0.0; 0.0, 0.0; 3.0, 4.0; 1.0, 0.0];
        let w = within_class_affinity(&x, &[0, 0, 1, 0], 1.0).unwrap();
        assert_eq!(w[(0, 1)], 1.0);
        assert_eq!(w[(0, 0)], 1.0);
        assert_eq!(w[(0, 2)], 0.0);
        // distance exactly theta
        assert!((w[(0, 3)] - 0.36787944117144233).abs() < 1e-15);
        assert!(is_symmetric(&w));
        assert!(within_class_affinity(&x, &[0, 0, 1, 0], 0.0).is_err());
    }

    #[test]
    fn between_class_indicator_cases() {
        assert_eq!(between_class_indicator(&[2, 2, 2]), DMatrix::zeros(3, 3));
        assert_eq!(between_class_indicator(&[0, 1]), dmatrix![0.0, 1.0; 1.0, 0.0]);
        let w = between_class_indicator(&[0, 0, 1]);
        let sums: Vec<f64> = (0..3).map(|i| w.row(i).sum()).collect();
        assert_eq!(sums, vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn cross_between_cases() {
        assert_eq!(cross_modal_between(&[0], &[0]), dmatrix![0.0]);
        assert_eq!(cross_modal_between(&[0], &[1]), dmatrix![1.0]);
        assert_eq!(cross_modal_between(&[0, 1], &[1]), dmatrix![1.0; 0.0]);
    }

    #[test]
    fn laplacian_cases() {
        assert_eq!(laplacian(&DMatrix::zeros(2, 2)).unwrap(), DMatrix::zeros(2, 2));
        assert_eq!(
            laplacian(&dmatrix![0.0, 1.0; 1.0, 0.0]).unwrap(),
            dmatrix![1.0, -1.0; -1.0, 1.0]
        );
        let w = dmatrix![0.0, 2.0, 1.0; 2.0, 0.0, 0.0; 1.0, 0.0, 0.0];
        let expected = DMatrix::from_diagonal(&nalgebra::dvector![3.0, 2.0, 1.0]) - &w;
        assert_eq!(laplacian(&w).unwrap(), expected);
        assert_eq!(laplacian(&dmatrix![0.0, 1.0; 0.0, 0.0]), Err(Error::Asymmetric));
    }

    #[test]
    fn block_diagonal_cases() {
        let one = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert_eq!(assemble_block_diagonal(&[one.clone()]).unwrap(), one);
        assert_eq!(
            assemble_block_diagonal(&[dmatrix![1.0], dmatrix![2.0]]).unwrap(),
            dmatrix![1.0, 0.0; 0.0, 2.0]
        );
        let m = assemble_block_diagonal(&[DMatrix::from_element(2, 2, 1.0), DMatrix::from_element(3, 3, 2.0)])
            .unwrap();
        assert_eq!(m.shape(), (5, 5));
        assert_eq!(m.view((0, 2), (2, 3)).iter().filter(|&&x| x != 0.0).count(), 0);
        assert_eq!(m.view((2, 0), (3, 2)).iter().filter(|&&x| x != 0.0).count(), 0);
        assert!(assemble_block_diagonal(&[DMatrix::zeros(2, 3)]).is_err());
    }

    #[test]
    fn assemble_cross_cases() {
        let mut blocks = BTreeMap::new();
        blocks.insert((0, 1), DMatrix::zeros(2, 3));
        let (_, l) = assemble_cross(&[2, 3], &blocks).unwrap();
        assert_eq!(l, DMatrix::zeros(5, 5));

        let mut blocks = BTreeMap::new();
        blocks.insert((0, 1), dmatrix![1.0]);
        let (w, l) = assemble_cross(&[1, 1], &blocks).unwrap();
        assert_eq!(w, dmatrix![0.0, 1.0; 1.0, 0.0]);
        assert_eq!(l, dmatrix![1.0, -1.0; -1.0, 1.0]);

        let mut bad = BTreeMap::new();
        bad.insert((0, 1), DMatrix::zeros(2, 2));
        assert!(assemble_cross(&[1, 1], &bad).is_err());
    }

    #[test]
    fn cross_within_uses_common_modality() {
        let cfg = SynthConfig {
            noise: 0.0,
            cross_noise: 0.0,
            warp: Warp::Identity,
            dims: vec![2, 2],
            per_class: 3,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let a = cross_modal_within(&ds, 0, 1, 1.0).unwrap();
        let lv = ds.modality_labels(0);
        let lu = ds.modality_labels(1);
        for i in 0..a.weights.nrows() {
            for j in 0..a.weights.ncols() {
                if lv[i] == lu[j] {
                    // zero noise: every same-class pair coincides
                    assert_eq!(a.weights[(i, j)], 1.0);
                } else {
                    assert_eq!(a.weights[(i, j)], 0.0);
                }
            }
        }
        assert!(cross_modal_within(&ds, 0, 0, 1.0).is_err());
    }

    #[test]
    fn cross_within_missing_observations_fall_back() {
        // sample 0 only in modality 0 and 2; sample 1 only in modality 1 and 2;
        // sample 2 is in no common modality with sample 0 except modality 0
        let m0 = (dmatrix![0.0; 5.0], vec![0, 2]);
        let m1 = (dmatrix![7.0; 9.0], vec![1, 3]);
        let m2 = (dmatrix![0.0; 1.0], vec![0, 1]);
        let labels = [(0, 0), (1, 0), (2, 0), (3, 0)].into_iter().collect();
        let ds = MultiModalDataset::new(1, vec![m0, m1, m2], labels).unwrap();
        let a = cross_modal_within(&ds, 0, 1, 1.0).unwrap();
        // (id 0, id 1): not both in 0, not both in 1, both in 2 at distance 1
        assert!((a.weights[(0, 0)] - libm::exp(-1.0)).abs() < 1e-15);
        // (id 2, id 3): no common modality
        assert_eq!(a.weights[(1, 1)], 0.0);
    }

    #[test]
    fn laplacian_set_invariants() {
        let ds = generate_synthetic(&SynthConfig { per_class: 6, ..SynthConfig::default() }).unwrap();
        let set = LaplacianSet::build(&ds, None).unwrap();
        let n = ds.total_observations();
        for l in [&set.within, &set.between, &set.cross_within, &set.cross_between] {
            assert_eq!(l.shape(), (n, n));
            assert!(is_symmetric(l));
            for i in 0..n {
                assert!(l.row(i).sum().abs() < 1e-10 * n as f64);
            }
            let eig = l.clone().symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e > -1e-10 * l.norm()));
        }
        for w in [&set.w_cross_within, &set.w_cross_between] {
            assert_eq!(*w, w.transpose());
        }
        assert_eq!(set.order.len(), n);
    }
}
