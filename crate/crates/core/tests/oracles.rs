//! Independent brute-force oracles for the linear-algebra building blocks and the
//! least-squares half-steps.

mod common;

use common::*;
use mstar::banded::{self, VecYuleWalker};
use mstar::diag::{self, DiagStarModel};
use mstar::model::StarModel;
use mstar::simulate;
use mstar::tensor::{self, MatrixTimeSeries, NormSide};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn lag_covariances_match_naive_sums() {
    for (n, p, q, seed) in [(3, 2, 2, 1), (10, 4, 3, 2), (7, 1, 4, 3), (2, 3, 1, 4)] {
        let s = random_series(n, p, q, seed);
        let covs = tensor::lag_covariances(&s).unwrap();
        for j in 0..q {
            for k in 0..q {
                assert!((covs.sigma0(j, k) - naive_cov(&s, 0, j, k)).norm() < 1e-12);
                assert!((covs.sigma1(j, k) - naive_cov(&s, 1, j, k)).norm() < 1e-12);
                let block = covs.full1().view((j * p, k * p), (p, p)).into_owned();
                assert_eq!(&block, covs.sigma1(j, k));
            }
        }
        assert_eq!(covs.full0(), &covs.full0().transpose());
    }
}

#[test]
fn lag_covariance_scalar_hand_values() {
    let s = MatrixTimeSeries::new(vec![DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 3.0)]).unwrap();
    let covs = tensor::lag_covariances(&s).unwrap();
    assert_eq!(covs.sigma1(0, 0)[(0, 0)], 3.0);
    assert_eq!(covs.sigma0(0, 0)[(0, 0)], 6.5);
}

#[test]
fn kron_matches_index_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (q, p) in [(2, 2), (3, 2), (2, 4)] {
        let b = random(q, q, &mut rng);
        let a = random(p, p, &mut rng);
        let c = tensor::kron(&b, &a);
        for i1 in 0..q {
            for j1 in 0..q {
                for i2 in 0..p {
                    for j2 in 0..p {
                        assert_eq!(c[(p * i1 + i2, p * j1 + j2)], b[(i1, j1)] * a[(i2, j2)]);
                    }
                }
            }
        }
    }
}

#[test]
fn rearrange_of_kron_is_outer_product_of_vecs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (p, q) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
        let a = random(p, p, &mut rng);
        let b = random(q, q, &mut rng);
        let r = tensor::rearrange(&tensor::kron(&b, &a), p, q).unwrap();
        // vec is column-major: vec(A)[w*p + v] = A[v, w].
        for w in 0..p {
            for v in 0..p {
                for s in 0..q {
                    for t in 0..q {
                        assert!((r[(w * p + v, s * q + t)] - a[(v, w)] * b[(t, s)]).abs() < 1e-15);
                    }
                }
            }
        }
        assert_eq!(tensor::unrearrange(&r, p, q).unwrap(), tensor::kron(&b, &a));
    }
}

#[test]
fn nearest_kronecker_reconstructs_exact_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for side in [NormSide::AUnitFrobenius, NormSide::BUnitFrobenius] {
        let a = random(3, 3, &mut rng);
        let b = random(3, 3, &mut rng);
        let c = tensor::kron(&b, &a);
        let (a_hat, b_hat) = tensor::nearest_kronecker(&c, 3, 3, side).unwrap();
        assert!((tensor::kron(&b_hat, &a_hat) - &c).norm() < 1e-10);
        let unit = match side {
            NormSide::AUnitFrobenius => a_hat.norm(),
            NormSide::BUnitFrobenius => b_hat.norm(),
        };
        assert!((unit - 1.0).abs() < 1e-12);
    }
}

#[test]
fn nearest_kronecker_perturbation() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (a, b) = (random(3, 3, &mut rng), random(2, 2, &mut rng));
    let (a2, b2) = (random(3, 3, &mut rng), random(2, 2, &mut rng));
    let main = tensor::kron(&b, &a);
    let c = &main + tensor::kron(&b2, &a2) * 1e-8;
    let (a_hat, b_hat) = tensor::nearest_kronecker(&c, 3, 2, NormSide::AUnitFrobenius).unwrap();
    assert!((tensor::kron(&b_hat, &a_hat) - main).norm() < 1e-6);
}

#[test]
fn nearest_kronecker_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (a, b) = (random(3, 3, &mut rng), random(4, 4, &mut rng));
    let (a1, b1) = tensor::nearest_kronecker(&tensor::kron(&b, &a), 3, 4, NormSide::AUnitFrobenius).unwrap();
    for c in [-3.0, 0.25, 7.5] {
        let (a2, b2) = tensor::nearest_kronecker(&tensor::kron(&(&b * c), &(&a / c)), 3, 4, NormSide::AUnitFrobenius)
            .unwrap();
        assert!((tensor::kron(&b2, &a2) - tensor::kron(&b1, &a1)).norm() < 1e-10, "{}", (tensor::kron(&b2, &a2) - tensor::kron(&b1, &a1)).norm());
    }
}

#[test]
fn step_beta_matches_brute_force_least_squares() {
    for seed in 0..5 {
        let (covs, w) = diag_fixture(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let a0 = DVector::from_fn(2, |_, _| rng.random_range(0.2..1.0));
        let a1 = DVector::from_fn(2, |_, _| rng.random_range(0.2..1.0));
        let (b0, b1) = diag::step_beta(&covs, &w, &a0, &a1).unwrap();
        let oracle = affine_ls(4, |theta| {
            let (c0, c1) = diag_coefficients(&w, &a0, &a1, &theta.rows(0, 2).into(), &theta.rows(2, 2).into());
            yw_residual(&covs, &c0, &c1)
        });
        assert!((&b0 - oracle.rows(0, 2)).norm() < 1e-10, "{b0} {b1} {oracle}");
        assert!((b1 - oracle.rows(2, 2)).norm() < 1e-10);
    }
}

#[test]
fn step_alpha_matches_brute_force_least_squares() {
    for seed in 0..5 {
        let (covs, w) = diag_fixture(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 9);
        let b0 = DVector::from_fn(2, |_, _| rng.random_range(0.2..1.0));
        let b1 = DVector::from_fn(2, |_, _| rng.random_range(0.2..1.0));
        let (a0, a1) = diag::step_alpha(&covs, &w, &b0, &b1).unwrap();
        let oracle = affine_ls(4, |theta| {
            let (c0, c1) = diag_coefficients(&w, &theta.rows(0, 2).into(), &theta.rows(2, 2).into(), &b0, &b1);
            yw_residual(&covs, &c0, &c1)
        });
        assert!((&a0 - oracle.rows(0, 2)).norm() < 1e-10, "{a0} {a1} {oracle}");
        assert!((a1 - oracle.rows(2, 2)).norm() < 1e-10);
    }
}

#[test]
fn diag_coefficients_match_dense_construction() {
    let (_, w) = diag_fixture(3);
    let (a0, a1) = (DVector::from_vec(vec![0.3, -0.7]), DVector::from_vec(vec![1.1, 0.4]));
    let (b0, b1) = (DVector::from_vec(vec![-0.2, 0.9]), DVector::from_vec(vec![0.5, 0.6]));
    let m = DiagStarModel::new(w.clone(), a0.clone(), a1.clone(), b0.clone(), b1.clone()).unwrap();
    let (c0, c1) = m.coefficients();
    let dense = |b: &DVector<f64>, v: &DMatrix<f64>, a: &DVector<f64>, wm: &DMatrix<f64>| {
        let right = DMatrix::from_fn(2, 2, |i, j| b[i] * v[(i, j)]);
        let left = DMatrix::from_fn(2, 2, |i, j| a[i] * wm[(i, j)]);
        DMatrix::from_fn(4, 4, |r, c| right[(r / 2, c / 2)] * left[(r % 2, c % 2)])
    };
    assert!((c0 - dense(&b0, &w.v0, &a0, &w.w0)).norm() < 1e-12);
    assert!((c1 - dense(&b1, &w.v1, &a1, &w.w1)).norm() < 1e-12);
}

#[test]
fn step_b_full_band_matches_unrestricted_least_squares() {
    let covs = tensor::lag_covariances(&random_series(40, 2, 2, 21)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut a0 = random(2, 2, &mut rng);
    a0[(0, 0)] = 0.0;
    a0[(1, 1)] = 0.0;
    let a1 = random(2, 2, &mut rng);
    let (b0, b1) = banded::step_b(&covs, &a0, &a1, 1).unwrap();
    let oracle = affine_ls(8, |t| {
        let b0 = DMatrix::from_column_slice(2, 2, &t.as_slice()[..4]);
        let b1 = DMatrix::from_column_slice(2, 2, &t.as_slice()[4..]);
        yw_residual(&covs, &tensor::kron(&b0, &a0), &tensor::kron(&b1, &a1))
    });
    assert!((DMatrix::from_column_slice(2, 2, &oracle.as_slice()[..4]) - b0).norm() < 1e-10);
    assert!((DMatrix::from_column_slice(2, 2, &oracle.as_slice()[4..]) - b1).norm() < 1e-10);
}

#[test]
fn step_a_matches_banded_least_squares() {
    for (p, q, ka) in [(2, 2, 1), (3, 2, 1), (4, 3, 2)] {
        let covs = tensor::lag_covariances(&random_series(60, p, q, 30 + p as u64)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let b0 = random(q, q, &mut rng);
        let b1 = random(q, q, &mut rng);
        let (a0, a1) = banded::step_a(&covs, &b0, &b1, ka).unwrap();
        let cells0 = band_cells(p, ka, true);
        let cells1 = band_cells(p, ka, false);
        let n0 = cells0.len();
        let oracle = affine_ls(n0 + cells1.len(), |t| {
            let a0 = fill(&cells0, p, &t.as_slice()[..n0]);
            let a1 = fill(&cells1, p, &t.as_slice()[n0..]);
            yw_residual(&covs, &tensor::kron(&b0, &a0), &tensor::kron(&b1, &a1))
        });
        assert!((fill(&cells0, p, &oracle.as_slice()[..n0]) - a0).norm() < 1e-10, "p={p}");
        assert!((fill(&cells1, p, &oracle.as_slice()[n0..]) - a1).norm() < 1e-10, "p={p}");
    }
}

#[test]
fn step_b_matches_banded_least_squares() {
    let (p, q, kb) = (2, 4, 1);
    let covs = tensor::lag_covariances(&random_series(60, p, q, 40)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut a0 = random(p, p, &mut rng);
    a0.fill_diagonal(0.0);
    let a1 = random(p, p, &mut rng);
    let (b0, b1) = banded::step_b(&covs, &a0, &a1, kb).unwrap();
    let cells = band_cells(q, kb, false);
    let n = cells.len();
    let oracle = affine_ls(2 * n, |t| {
        let b0 = fill(&cells, q, &t.as_slice()[..n]);
        let b1 = fill(&cells, q, &t.as_slice()[n..]);
        yw_residual(&covs, &tensor::kron(&b0, &a0), &tensor::kron(&b1, &a1))
    });
    assert!((fill(&cells, q, &oracle.as_slice()[..n]) - b0).norm() < 1e-10);
    assert!((fill(&cells, q, &oracle.as_slice()[n..]) - b1).norm() < 1e-10);
}

#[test]
fn lenient_c_estimate_is_minimum_norm_row_regression() {
    // Full bands at p = q = 2 give 6 unknowns per row against 4 equations.
    let covs = tensor::lag_covariances(&random_series(50, 2, 2, 50)).unwrap();
    assert!(banded::estimate_c_covariances(&covs, 1, 1).is_err());
    let (c0, c1, flagged) = banded::estimate_c_lenient(&covs, 1, 1).unwrap();
    assert_eq!(flagged, vec![0, 1, 2, 3]);
    let yw = VecYuleWalker::new(&covs);
    let d = 4;
    for i in 0..d {
        let support = yw.support(i, 1, 1);
        let x = DMatrix::from_fn(d, support.len(), |r, k| {
            let col = support[k];
            if col < d {
                covs.full1()[(col, r)]
            } else {
                covs.full0()[(col - d, r)]
            }
        });
        let y = DVector::from_fn(d, |r, _| covs.full1()[(i, r)]);
        let coef = lstsq(&x, &y);
        for (k, &col) in support.iter().enumerate() {
            let got = if col < d { c0[(i, col)] } else { c1[(i, col - d)] };
            assert!((got - coef[k]).abs() < 1e-10, "row {i} col {col}");
        }
    }
}

/// Relative C1 error over the rows that are identified with population covariances.
fn identified_c1_error(model: &mstar::banded::BandedStarModel, n: usize) -> (f64, f64) {
    let (p, q) = (model.a0.nrows(), model.b0.nrows());
    let pop = tensor::population_lag_covariances(&model.transition().unwrap(), p, q).unwrap();
    let (_, _, unidentified) = banded::estimate_c_lenient(&pop, model.ka, model.kb).unwrap();
    let series = simulate::simulate_series(model, n, 500, 6).unwrap();
    let covs = tensor::lag_covariances(&series).unwrap();
    let (_, c1, _) = banded::estimate_c_lenient(&covs, model.ka, model.kb).unwrap();
    let truth = model.coefficient_product(1);
    let (mut num, mut den) = (0.0, 0.0);
    for i in (0..p * q).filter(|i| !unidentified.contains(i)) {
        num += (c1.row(i) - truth.row(i)).norm_squared();
        den += truth.row(i).norm_squared();
    }
    ((num / den).sqrt(), (c1 - &truth).norm() / truth.norm())
}

#[test]
fn estimate_c_consistent_on_identified_rows() {
    let model = simulate::gen_model_banded(5, 5, 1, 1, 5).unwrap();
    let (ident_5k, all_5k) = identified_c1_error(&model, 5000);
    let (ident_50k, all_50k) = identified_c1_error(&model, 50000);
    assert!(ident_5k < 0.2, "identified-row error {ident_5k}");
    assert!(ident_50k < ident_5k && all_50k < all_5k);
}
