//! Helpers shared by the integration targets.
#![allow(dead_code)]

use chrono::{Duration, NaiveDate, NaiveTime};
use mstar::app::{Bucket, VolumePanel};
use mstar::diag::{DiagStarModel, DiagWeights};
use mstar::model::{FitConfig, StarModel};
use mstar::simulate;
use mstar::tensor::{self, LagCovariances, MatrixTimeSeries};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_series(n: usize, p: usize, q: usize, seed: u64) -> MatrixTimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MatrixTimeSeries::new((0..n).map(|_| random(p, q, &mut rng)).collect()).unwrap()
}

/// `(1/n) sum_t X_t[a, j] X_{t-h}[b, k]` by explicit loops.
pub fn naive_cov(s: &MatrixTimeSeries, h: usize, j: usize, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(s.p(), s.p());
    for a in 0..s.p() {
        for b in 0..s.p() {
            let mut acc = 0.0;
            for t in h..s.n() {
                acc += s.frame(t)[(a, j)] * s.frame(t - h)[(b, k)];
            }
            out[(a, b)] = acc / s.n() as f64;
        }
    }
    out
}

/// Minimum-norm least squares through the SVD.
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    x.clone().svd(true, true).solve(y, 1e-14).unwrap()
}

/// Brute-force LS over an affine residual map: columns are unit responses.
pub fn affine_ls<F>(unknowns: usize, residual: F) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let r0 = residual(&DVector::zeros(unknowns));
    let mut x = DMatrix::zeros(r0.len(), unknowns);
    for k in 0..unknowns {
        let mut e = DVector::zeros(unknowns);
        e[k] = 1.0;
        x.set_column(k, &(residual(&e) - &r0));
    }
    lstsq(&x, &(-r0))
}

pub fn yw_residual(covs: &LagCovariances, c0: &DMatrix<f64>, c1: &DMatrix<f64>) -> DVector<f64> {
    let r = covs.full1() - c0 * covs.full1() - c1 * covs.full0();
    DVector::from_column_slice(r.as_slice())
}

pub fn diag_fixture(seed: u64) -> (LagCovariances, DiagWeights) {
    let covs = tensor::lag_covariances(&random_series(30, 2, 2, seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let w = DiagWeights::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        random(2, 2, &mut rng),
        DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 1.0, 0.5]),
        random(2, 2, &mut rng),
    )
    .unwrap();
    (covs, w)
}

pub fn diag_coefficients(w: &DiagWeights, a0: &DVector<f64>, a1: &DVector<f64>, b0: &DVector<f64>, b1: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = DiagStarModel::new(w.clone(), a0.clone(), a1.clone(), b0.clone(), b1.clone()).unwrap();
    m.coefficients()
}

/// Band entries of a `dim x dim` matrix, row-major.
pub fn band_cells(dim: usize, k: usize, skip_diag: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..dim {
        for j in 0..dim {
            if i.abs_diff(j) <= k && !(skip_diag && i == j) {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn fill(cells: &[(usize, usize)], dim: usize, theta: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for (&(i, j), &v) in cells.iter().zip(theta) {
        m[(i, j)] = v;
    }
    m
}

pub const TIGHT: FitConfig = FitConfig {
    tolerance: 1e-13,
    max_iterations: 5000,
    seed: 3,
};

pub fn population(model: &dyn StarModel) -> LagCovariances {
    tensor::population_lag_covariances(&model.transition().unwrap(), model.p(), model.q()).unwrap()
}

/// Twenty `(p, q, seed)` triples with `3 <= p, q <= 6`, skipping the 3x3 shape
/// whose diagonal design has a continuum of exact solutions.
pub fn shapes() -> impl Iterator<Item = (usize, usize, u64)> {
    (0..40u64)
        .map(|k| (3 + (k as usize * 7) % 4, 3 + (k as usize * 3 + k as usize / 4) % 4, 100 + k))
        .filter(|&(p, q, _)| (p, q) != (3, 3))
        .take(20)
}

pub fn panel(days: usize, buckets: usize, assets: usize, seed: u64) -> VolumePanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let open = NaiveTime::from_hms_opt(9, 0, 0).unwrap();
    let buckets: Vec<Bucket> = (0..buckets as i64)
        .map(|k| Bucket {
            start: open + Duration::minutes(15 * k),
            end: open + Duration::minutes(15 * (k + 1)),
        })
        .collect();
    let first = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    let dates = (0..days as i64).map(|d| first + Duration::days(d)).collect();
    let size = days * buckets.len() * assets;
    let volume = (0..size).map(|_| rng.random_range(2.0..5000.0)).collect();
    let price = (0..size).map(|_| rng.random_range(90.0..110.0)).collect();
    let names = (0..assets).map(|a| format!("A{a}")).collect();
    VolumePanel::new(dates, buckets, names, volume, Some(price)).unwrap()
}

/// Runs the `mstar` binary single-threaded; returns the exit code and stderr.
pub fn mstar(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mstar"))
        .args(args)
        .env("MSTAR_THREADS", "1")
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

pub fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

pub struct Fixture {
    _tmp: tempfile::TempDir,
    pub root: PathBuf,
}

impl Fixture {
    pub fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let model = simulate::gen_model_banded(4, 3, 1, 1, 5).unwrap();
        let series = simulate::simulate_series(&model, 300, 100, 6).unwrap();
        series.write_csv(fs::File::create(root.join("series.csv")).unwrap()).unwrap();
        let diag = simulate::gen_model_diag(4, 3, 5).unwrap();
        let series = simulate::simulate_series(&diag, 300, 100, 6).unwrap();
        series.write_csv(fs::File::create(root.join("diag_series.csv")).unwrap()).unwrap();
        let f = Self { _tmp: tmp, root };
        let out = f.path("synth");
        let (code, err) = mstar(&[
            "synth-panel", "--out", &out, "--seed", "3", "--days", "40", "--assets", "3",
        ]);
        assert_eq!(code, 0, "{err}");
        f
    }

    pub fn path(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }

    /// Run `args` into two fresh directories and require identical output trees.
    pub fn twice(&self, tag: &str, args: &[&str]) -> BTreeMap<String, Vec<u8>> {
        let mut trees = Vec::new();
        for k in 0..2 {
            let out = self.path(&format!("{tag}-{k}"));
            let mut full: Vec<&str> = args.to_vec();
            full.extend(["--out", &out]);
            let (code, err) = mstar(&full);
            assert_eq!(code, 0, "{tag}: {err}");
            trees.push(files(Path::new(&out)));
        }
        assert_eq!(trees[0], trees[1], "{tag} differs between runs");
        assert!(trees[0].contains_key("manifest.json") && trees[0].contains_key("config.json"));
        trees.pop().unwrap()
    }
}

/// Runs each subcommand twice and checks the outputs match byte for byte.
pub fn every_subcommand_twice(fx: &Fixture) {
    let panel = fx.path("synth/panel.csv");
    let series = fx.path("series.csv");
    let diag_series = fx.path("diag_series.csv");

    let sim = fx.twice(
        "simulate",
        &["simulate", "--kind", "banded", "--p", "4", "--q", "4", "--kA", "1", "--kB", "1", "--n", "200,400", "--reps", "3", "--K", "2", "--seed", "7"],
    );
    let header = String::from_utf8_lossy(&sim["report.csv"]).lines().next().unwrap().to_string();
    assert!(header.contains("_mean") && header.contains("_sd"), "{header}");
    fx.twice("simulate-diag", &["simulate", "--kind", "diag", "--p", "4", "--q", "4", "--n", "200", "--reps", "2", "--seed", "7"]);
    fx.twice("fit-diag", &["fit-diag", "--input", &diag_series, "--weights", "simulation", "--seed", "2"]);
    fx.twice("fit-banded", &["fit-banded", "--input", &series, "--kA", "1", "--kB", "1"]);
    let sel = fx.twice("select", &["select-bandwidth", "--input", &series, "--K", "2"]);
    let json: serde_json::Value = serde_json::from_slice(&sel["bandwidths.json"]).unwrap();
    assert!(json["kA_hat"].is_u64() && json["kB_hat"].is_u64(), "{json}");

    let fc_args = ["--input", panel.as_str(), "--lookback", "5", "--fit-window", "20", "--eval-days", "4"];
    for method in ["sma", "adj_sma", "diag_star", "banded_star"] {
        let mut args = vec!["forecast", "--method", method, "--seed", "1"];
        args.extend(fc_args);
        let tree = fx.twice(&format!("forecast-{method}"), &args);
        assert!(tree.contains_key("forecast.csv") && tree.contains_key("errors.csv") && tree.contains_key("vwap.csv"));
    }
    let forecast_file = fx.path("forecast-banded_star-0/forecast.csv");
    let pov = fx.twice("pov-file", &["backtest-pov", "--input", &panel, "--forecast", &forecast_file]);
    assert!(pov.contains_key("impact.csv") && pov.contains_key("timing.csv") && pov.contains_key("episodes.csv"));
    let mut args = vec!["backtest-pov", "--method", "banded_star", "--alpha", "0.1,0.3"];
    args.extend(fc_args);
    fx.twice("pov-method", &args);
    fx.twice("report", &["report", "--input", &panel, "--forecast", &forecast_file]);
    fx.twice("synth", &["synth-panel", "--seed", "9", "--days", "12"]);
}
