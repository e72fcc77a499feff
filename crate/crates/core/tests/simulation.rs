//! Data generators and Monte Carlo trends.

use mstar::banded;
use mstar::linalg;
use mstar::model::{FitConfig, StarModel};
use mstar::simulate::{self, SimDesign};
use mstar::tensor;
use nalgebra::DMatrix;

#[test]
fn generated_models_are_stationary_for_100_seeds() {
    for seed in 0..100 {
        let d = simulate::gen_model_diag(6, 5, seed).unwrap();
        assert!(d.transition().unwrap().spectral_radius() < 1.0);
        let b = simulate::gen_model_banded(6, 5, 2, 1, seed).unwrap();
        assert!(b.transition().unwrap().spectral_radius() < 1.0);
        assert!(linalg::is_banded(&b.a0, 2, true) && linalg::is_banded(&b.a1, 2, false));
        assert!(linalg::is_banded(&b.b0, 1, false) && linalg::is_banded(&b.b1, 1, false));
        assert!((b.a0.norm() - 1.0).abs() < 1e-12 && (b.a1.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn same_seed_gives_identical_models_and_series() {
    let a = simulate::gen_model_banded(4, 4, 1, 2, 9).unwrap();
    let b = simulate::gen_model_banded(4, 4, 1, 2, 9).unwrap();
    assert_eq!(a.coefficients(), b.coefficients());
    let x = simulate::simulate_series(&a, 50, 20, 4).unwrap();
    let y = simulate::simulate_series(&b, 50, 20, 4).unwrap();
    assert_eq!(x.frames(), y.frames());
}

#[test]
fn sample_covariance_converges_to_population() {
    let model = simulate::gen_model_banded(2, 2, 1, 1, 17).unwrap();
    let (pop0, _) = tensor::population_covariances(&model.transition().unwrap()).unwrap();
    let series = simulate::simulate_series(&model, 200_000, 500, 23).unwrap();
    let sample = tensor::lag_covariances(&series).unwrap();
    let rel = (sample.full0() - &pop0).norm() / pop0.norm();
    assert!(rel < 0.02, "relative error {rel}");
}

#[test]
fn diag_errors_shrink_with_sample_size() {
    let report = simulate::monte_carlo(&SimDesign::diag(5, 5, vec![200, 1000, 5000], 20, 11)).unwrap();
    for name in ["err0", "err1"] {
        let means: Vec<f64> = report.cells.iter().map(|c| c.metric(name).unwrap().mean).collect();
        assert!(means.windows(2).all(|w| w[1] < w[0]), "{name}: {means:?}");
    }
    assert!(report.cells.iter().all(|c| c.failures == 0));
}

#[test]
fn banded_errors_shrink_and_beat_nearest_kronecker() {
    let report = simulate::monte_carlo(&SimDesign::banded(6, 6, 1, 1, vec![200, 1000, 5000], 20, 12)).unwrap();
    for name in ["yw_err0", "yw_err1", "nkp_err0", "nkp_err1"] {
        let means: Vec<f64> = report.cells.iter().map(|c| c.metric(name).unwrap().mean).collect();
        assert!(means.windows(2).all(|w| w[1] < w[0]), "{name}: {means:?}");
    }
    for cell in &report.cells {
        for lag in ["0", "1"] {
            let yw = cell.metric(&format!("yw_err{lag}")).unwrap().mean;
            let nkp = cell.metric(&format!("nkp_err{lag}")).unwrap().mean;
            assert!(yw < nkp, "n={} lag {lag}: {yw} vs {nkp}", cell.n);
        }
    }
}

#[test]
fn monte_carlo_report_is_deterministic() {
    let mut design = SimDesign::banded(5, 5, 1, 1, vec![300], 6, 5);
    design.k_max = Some(2);
    let a = simulate::monte_carlo(&design).unwrap();
    let b = simulate::monte_carlo(&design).unwrap();
    assert_eq!(a, b);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    a.write_csv(&mut x).unwrap();
    b.write_csv(&mut y).unwrap();
    assert_eq!(x, y);
    let freqs = &a.cells[0].frequencies;
    assert!(freqs.iter().all(|f| (0.0..=1.0).contains(&f.value)));
}

#[test]
fn vanishing_lag_term_is_fitted_at_the_noise_floor() {
    let (p, q, n, reps) = (4, 4, 1000, 20);
    let mut null = simulate::gen_model_banded(p, q, 1, 1, 40).unwrap();
    null.b1 = DMatrix::zeros(q, q);
    let config = FitConfig::default();
    let lag_one = |seed: u64| {
        let series = simulate::simulate_series(&null, n, 200, seed).unwrap();
        banded::fit_banded(&series, 1, 1, &config).unwrap().model.coefficient_product(1).norm()
    };
    let floor: Vec<f64> = (0..reps).map(|r| lag_one(1000 + r)).collect();
    let s = simulate::summarize("floor", &floor);
    let probe = lag_one(7);
    assert!(probe < s.mean + 3.0 * s.sd, "{probe} vs floor {} + 3 x {}", s.mean, s.sd);

    // A generator with a genuine lag term sits far above that floor.
    let live = simulate::gen_model_banded(p, q, 1, 1, 40).unwrap();
    let series = simulate::simulate_series(&live, n, 200, 7).unwrap();
    let fitted = banded::fit_banded(&series, 1, 1, &config).unwrap().model.coefficient_product(1).norm();
    assert!(fitted > s.mean + 3.0 * s.sd, "{fitted} vs floor {}", s.mean);
}
