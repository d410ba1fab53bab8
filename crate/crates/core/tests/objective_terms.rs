mod common;

use common::{dist_rows, gauss_solve, gaussian_kernel, pairwise_quadratic, random_orthonormal, rng};
use mnse_core::dataset::{generate_synthetic, SynthConfig, Warp};
use mnse_core::graphs::LaplacianSet;
use mnse_core::kernel::JitterLadder;
use mnse_core::optimizer::{objective, stacked_inverse_square, Weights};
use mnse_core::DMatrix;
use proptest::prelude::*;

/// Smallest distance between two rows; a kernel scale below it keeps the
/// Gaussian kernel matrix close to the identity and well conditioned.
fn min_distance(x: &DMatrix<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..x.nrows() {
        for j in 0..i {
            best = best.min(dist_rows(x, i, x, j));
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn six_terms_equal_the_trace_form(
        seed in any::<u64>(),
        classes in 2usize..=4,
        modalities in 2usize..=3,
        per_class in 2usize..=5,
        scale in 0.2f64..0.7,
        mu in proptest::array::uniform5(0.01f64..10.0),
    ) {
        let cfg = SynthConfig {
            num_classes: classes,
            num_modalities: modalities,
            per_class,
            dims: (0..modalities).map(|v| 2 + v).collect(),
            warp: Warp::Cubic,
            seed,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let lap = LaplacianSet::build(&ds, None).unwrap();
        let features: Vec<&DMatrix<f64>> = ds.modalities().iter().map(|m| m.features()).collect();
        let sigma: Vec<f64> = features.iter().map(|x| scale * min_distance(x)).collect();
        let y = random_orthonormal(&mut rng(seed ^ 0x5eed), lap.dim(), classes - 1);
        let w = Weights { mu1: mu[0], mu2: mu[1], mu3: mu[2], mu4: mu[3], mu5: mu[4] };

        let mut penalty = 0.0;
        let mut offset = 0;
        for (x, &s) in features.iter().zip(&sigma) {
            let n = x.nrows();
            let c = gauss_solve(&gaussian_kernel(x, s), &y.rows(offset, n).into_owned());
            penalty += c.iter().map(|v| v * v).sum::<f64>();
            offset += n;
        }
        let six = pairwise_quadratic(&lap.w_within, &y)
            - w.mu1 * pairwise_quadratic(&lap.w_between, &y)
            + w.mu2 * penalty
            + w.mu3 * sigma.iter().map(|s| s.powi(-2)).sum::<f64>()
            + w.mu4 * pairwise_quadratic(&lap.w_cross_within, &y)
            - w.mu5 * pairwise_quadratic(&lap.w_cross_between, &y);

        let psi = stacked_inverse_square(&features, &sigma, &JitterLadder::default()).unwrap();
        let lib = objective(&y, &lap, &psi, &sigma, &w).unwrap();
        prop_assert!((six - lib).abs() <= 1e-8 * six.abs().max(lib.abs()), "{six} vs {lib}");
    }
}
