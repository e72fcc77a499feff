//! Data-generating processes and the Monte-Carlo harness.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::{self, BandedStarModel};
use crate::diag::{self, DiagStarModel, DiagWeights};
use crate::error::{Error, Result};
use crate::model::{FitConfig, StarModel};
use crate::tensor::{self, MatrixTimeSeries, TransitionForm};

/// Rejection budget for stationary draws.
pub const MAX_ATTEMPTS: usize = 1000;
pub const DEFAULT_BURN_IN: usize = 500;

fn uniform_half(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-0.5..0.5)
}

/// Simulation-design weights with `alpha`, `beta` drawn iid `U[-0.5, 0.5]`,
/// redrawn until the model is stationary.
pub fn gen_model_diag(p: usize, q: usize, seed: u64) -> Result<DiagStarModel> {
    if p == 0 || q == 0 {
        return Err(Error::InvalidParameter("p and q must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = DiagWeights::simulation_design(p, q);
    for _ in 0..MAX_ATTEMPTS {
        let alpha0 = DVector::from_fn(p, |_, _| uniform_half(&mut rng));
        let alpha1 = DVector::from_fn(p, |_, _| uniform_half(&mut rng));
        let beta0 = DVector::from_fn(q, |_, _| uniform_half(&mut rng));
        let beta1 = DVector::from_fn(q, |_, _| uniform_half(&mut rng));
        let model = DiagStarModel::new(weights.clone(), alpha0, alpha1, beta0, beta1)?;
        if model.transition().is_ok() {
            return Ok(model);
        }
    }
    Err(Error::Generation { attempts: MAX_ATTEMPTS })
}

fn random_band(n: usize, bandwidth: usize, zero_diagonal: bool, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            if i.abs_diff(j) <= bandwidth && !(zero_diagonal && i == j) {
                m[(i, j)] = uniform_half(rng);
            }
        }
    }
    m
}

/// Banded factors with in-band entries iid `U(-0.5, 0.5)` (diagonal of `A0` zero),
/// redrawn until stationary, then normalized to `||A_k||_F = 1`.
pub fn gen_model_banded(p: usize, q: usize, ka: usize, kb: usize, seed: u64) -> Result<BandedStarModel> {
    if p < 2 || q == 0 || ka >= p || kb >= q {
        return Err(Error::InvalidParameter(format!(
            "need p >= 2, kA < p, kB < q (p={p}, q={q}, kA={ka}, kB={kb})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let a0 = random_band(p, ka, true, &mut rng);
        let a1 = random_band(p, ka, false, &mut rng);
        let b0 = random_band(q, kb, false, &mut rng);
        let b1 = random_band(q, kb, false, &mut rng);
        let model = BandedStarModel::new(a0, a1, b0, b1, ka, kb)?;
        if model.transition().is_ok() {
            return model.normalized();
        }
    }
    Err(Error::Generation { attempts: MAX_ATTEMPTS })
}

/// Run `vec(X_t) = psi vec(X_{t-1}) + G vec(E_t)` from zero, drawing `vec(E_t)` with
/// `draw`, and keep the `n` frames after `burn_in`.
pub fn simulate_with_innovations<F>(
    form: &TransitionForm,
    p: usize,
    q: usize,
    n: usize,
    burn_in: usize,
    mut draw: F,
) -> Result<MatrixTimeSeries>
where
    F: FnMut(&mut DVector<f64>),
{
    let d = p * q;
    if form.dim() != d {
        return Err(Error::Dimension(format!("transition is {}x{0}, expected pq = {d}", form.dim())));
    }
    let radius = form.spectral_radius();
    if !(radius < 1.0) {
        return Err(Error::NonStationary { radius });
    }
    let mut x = DVector::zeros(d);
    let mut e = DVector::zeros(d);
    let mut next = DVector::zeros(d);
    let mut frames = Vec::with_capacity(n);
    for t in 0..burn_in + n {
        draw(&mut e);
        next.gemv(1.0, &form.psi, &x, 0.0);
        next.gemv(1.0, &form.innov_transform, &e, 1.0);
        std::mem::swap(&mut x, &mut next);
        if t >= burn_in {
            frames.push(DMatrix::from_column_slice(p, q, x.as_slice()));
        }
    }
    MatrixTimeSeries::new(frames)
}

/// Simulate a stationary model with iid standard-normal innovations
/// (correlated through the Cholesky factor of `innov_cov` when it is not the identity).
pub fn simulate_series(model: &dyn StarModel, n: usize, burn_in: usize, seed: u64) -> Result<MatrixTimeSeries> {
    let form = model.transition()?;
    simulate_form(&form, model.p(), model.q(), n, burn_in, seed)
}

pub fn simulate_form(
    form: &TransitionForm,
    p: usize,
    q: usize,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<MatrixTimeSeries> {
    let d = form.dim();
    let chol = if form.innov_cov == DMatrix::identity(d, d) {
        None
    } else {
        Some(
            form.innov_cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::InvalidParameter("innovation covariance is not positive definite".into()))?
                .unpack(),
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DVector::zeros(d);
    simulate_with_innovations(form, p, q, n, burn_in, |e| {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        match &chol {
            Some(l) => e.gemv(1.0, l, &z, 0.0),
            None => e.copy_from(&z),
        }
    })
}

/// `||est_right ⊗ est_left - true_right ⊗ true_left||_F`.
pub fn kron_error(
    est_left: &DMatrix<f64>,
    est_right: &DMatrix<f64>,
    true_left: &DMatrix<f64>,
    true_right: &DMatrix<f64>,
) -> Result<f64> {
    if est_left.shape() != true_left.shape() || est_right.shape() != true_right.shape() {
        return Err(Error::Dimension("estimated and true factors differ in shape".into()));
    }
    Ok((tensor::kron(est_right, est_left) - tensor::kron(true_right, true_left)).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    Diag,
    Banded,
}

/// A Monte-Carlo study: one cell per sample size in `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDesign {
    pub kind: SimKind,
    pub p: usize,
    pub q: usize,
    pub n: Vec<usize>,
    pub replications: usize,
    /// True bandwidths of the banded generator.
    #[serde(default = "default_band", rename = "kA")]
    pub ka: usize,
    #[serde(default = "default_band", rename = "kB")]
    pub kb: usize,
    /// When set (banded only), bandwidths are selected with this search bound and the
    /// fit uses the selected values.
    #[serde(default, rename = "K")]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_omega_factor")]
    pub omega_factor: f64,
    #[serde(default)]
    pub fit: FitConfig,
}

fn default_band() -> usize {
    2
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_omega_factor() -> f64 {
    0.1
}

impl SimDesign {
    pub fn diag(p: usize, q: usize, n: Vec<usize>, replications: usize, seed: u64) -> Self {
        Self {
            kind: SimKind::Diag,
            p,
            q,
            n,
            replications,
            ka: default_band(),
            kb: default_band(),
            k_max: None,
            seed,
            burn_in: DEFAULT_BURN_IN,
            omega_factor: default_omega_factor(),
            fit: FitConfig::default(),
        }
    }

    pub fn banded(p: usize, q: usize, ka: usize, kb: usize, n: Vec<usize>, replications: usize, seed: u64) -> Self {
        Self {
            kind: SimKind::Banded,
            ka,
            kb,
            ..Self::diag(p, q, n, replications, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be >= 1".into()));
        }
        if self.n.is_empty() || self.n.iter().any(|&n| n < 2) {
            return Err(Error::InvalidParameter("every sample size must be >= 2".into()));
        }
        if self.p == 0 || self.q == 0 {
            return Err(Error::InvalidParameter("p and q must be positive".into()));
        }
        if !(self.omega_factor > 0.0) {
            return Err(Error::InvalidParameter("omega_factor must be positive".into()));
        }
        self.fit.validate()?;
        if self.kind == SimKind::Banded {
            if self.ka >= self.p || self.kb >= self.q {
                return Err(Error::InvalidParameter("kA < p and kB < q required".into()));
            }
            if let Some(k) = self.k_max {
                if k < 1 || k >= self.p.min(self.q) {
                    return Err(Error::InvalidParameter(format!("K must be in 1..min(p,q), got {k}")));
                }
            }
        } else if self.k_max.is_some() {
            return Err(Error::InvalidParameter("K applies to banded designs only".into()));
        }
        Ok(())
    }

    fn metric_names(&self) -> Vec<&'static str> {
        match self.kind {
            SimKind::Diag => vec!["err0", "err1"],
            SimKind::Banded => vec!["yw_err0", "yw_err1", "nkp_err0", "nkp_err1"],
        }
    }

    fn frequency_names(&self) -> Vec<&'static str> {
        match (self.kind, self.k_max) {
            (SimKind::Banded, Some(_)) => vec!["kA_correct", "kB_correct"],
            _ => vec![],
        }
    }
}

/// Seeds `[model, series, fit]` for replication `rep` of cell `cell`.
///
/// The model seed ignores the cell, so replication `rep` uses the same true model at
/// every sample size and the cells differ only through the simulated data.
fn replication_seeds(seed: u64, cell: usize, rep: usize) -> [u64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    let model = rng.next_u64();
    rng.set_stream((((cell as u64) + 1) << 32) | rep as u64);
    [model, rng.next_u64(), rng.next_u64()]
}

/// Scores of one replication.
#[derive(Debug, Clone)]
struct Replication {
    metrics: Vec<f64>,
    hits: Vec<bool>,
    iterations: usize,
    converged: bool,
}

fn run_replication(design: &SimDesign, n: usize, seeds: [u64; 3]) -> Result<Replication> {
    let [model_seed, series_seed, fit_seed] = seeds;
    let config = FitConfig {
        seed: fit_seed,
        ..design.fit
    };
    match design.kind {
        SimKind::Diag => {
            let truth = gen_model_diag(design.p, design.q, model_seed)?;
            let series = simulate_series(&truth, n, design.burn_in, series_seed)?;
            let fit = diag::fit_diag(&series, &truth.weights, &config)?;
            let metrics = (0..2)
                .map(|lag| (fit.model.coefficient_product(lag) - truth.coefficient_product(lag)).norm())
                .collect();
            Ok(Replication {
                metrics,
                hits: vec![],
                iterations: fit.iterations,
                converged: fit.converged,
            })
        }
        SimKind::Banded => {
            let truth = gen_model_banded(design.p, design.q, design.ka, design.kb, model_seed)?;
            let series = simulate_series(&truth, n, design.burn_in, series_seed)?;
            let covs = tensor::lag_covariances(&series)?;
            let (ka, kb, hits) = match design.k_max {
                Some(k) => {
                    let omega = design.omega_factor * (design.p * design.q) as f64 / n as f64;
                    let sel = banded::select_bandwidths_covariances(&covs, k, omega)?;
                    (sel.ka_hat, sel.kb_hat, vec![sel.ka_hat == design.ka, sel.kb_hat == design.kb])
                }
                None => (design.ka, design.kb, vec![]),
            };
            let fit = banded::fit_banded_covariances(&covs, ka, kb, &config)?;
            let err = |m: &BandedStarModel, lag| (m.coefficient_product(lag) - truth.coefficient_product(lag)).norm();
            Ok(Replication {
                metrics: vec![
                    err(&fit.model, 0),
                    err(&fit.model, 1),
                    err(&fit.initial, 0),
                    err(&fit.initial, 1),
                ],
                hits,
                iterations: fit.iterations,
                converged: fit.converged,
            })
        }
    }
}

/// Mean and sample standard deviation (`n - 1` divisor; 0 for a single value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

pub fn summarize(name: &str, values: &[f64]) -> Summary {
    let k = values.len();
    if k == 0 {
        return Summary {
            name: name.into(),
            mean: f64::NAN,
            sd: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let sd = if k > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        name: name.into(),
        mean,
        sd,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub name: String,
    pub value: f64,
}

/// Aggregates for one `(p, q, n)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub replications: usize,
    /// Replications that raised an error; excluded from every aggregate.
    pub failures: usize,
    pub metrics: Vec<Summary>,
    pub frequencies: Vec<Frequency>,
    pub mean_iterations: f64,
    pub converged_fraction: f64,
}

impl CellReport {
    pub fn metric(&self, name: &str) -> Option<&Summary> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn frequency(&self, name: &str) -> Option<f64> {
        self.frequencies.iter().find(|f| f.name == name).map(|f| f.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub design: SimDesign,
    pub cells: Vec<CellReport>,
}

/// Run every cell of `design`. Replications run in parallel but are aggregated in
/// replication order, so the report depends only on the design.
pub fn monte_carlo(design: &SimDesign) -> Result<MonteCarloReport> {
    design.validate()?;
    let names = design.metric_names();
    let freq_names = design.frequency_names();
    let mut cells = Vec::with_capacity(design.n.len());
    for (cell, &n) in design.n.iter().enumerate() {
        let reps: Vec<Result<Replication>> = (0..design.replications)
            .into_par_iter()
            .map(|rep| run_replication(design, n, replication_seeds(design.seed, cell, rep)))
            .collect();
        let ok: Vec<Replication> = reps.into_iter().filter_map(|r| r.ok()).collect();
        let failures = design.replications - ok.len();
        let metrics = names
            .iter()
            .enumerate()
            .map(|(k, name)| summarize(name, &ok.iter().map(|r| r.metrics[k]).collect::<Vec<_>>()))
            .collect();
        let count = ok.len().max(1) as f64;
        let frequencies = freq_names
            .iter()
            .enumerate()
            .map(|(k, name)| Frequency {
                name: (*name).into(),
                value: ok.iter().filter(|r| r.hits[k]).count() as f64 / count,
            })
            .collect();
        cells.push(CellReport {
            p: design.p,
            q: design.q,
            n,
            replications: design.replications,
            failures,
            metrics,
            frequencies,
            mean_iterations: ok.iter().map(|r| r.iterations as f64).sum::<f64>() / count,
            converged_fraction: ok.iter().filter(|r| r.converged).count() as f64 / count,
        });
    }
    Ok(MonteCarloReport {
        design: design.clone(),
        cells,
    })
}

impl MonteCarloReport {
    /// One row per cell: sizes, failure count, `<metric>_mean`, `<metric>_sd`, frequencies.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["kind", "p", "q", "n", "replications", "failures"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if let Some(first) = self.cells.first() {
            for m in &first.metrics {
                header.push(format!("{}_mean", m.name));
                header.push(format!("{}_sd", m.name));
            }
            for f in &first.frequencies {
                header.push(f.name.clone());
            }
        }
        header.push("mean_iterations".into());
        header.push("converged_fraction".into());
        w.write_record(&header)?;
        let kind = match self.design.kind {
            SimKind::Diag => "diag",
            SimKind::Banded => "banded",
        };
        for c in &self.cells {
            let mut row = vec![
                kind.to_string(),
                c.p.to_string(),
                c.q.to_string(),
                c.n.to_string(),
                c.replications.to_string(),
                c.failures.to_string(),
            ];
            for m in &c.metrics {
                row.push(m.mean.to_string());
                row.push(m.sd.to_string());
            }
            for f in &c.frequencies {
                row.push(f.value.to_string());
            }
            row.push(c.mean_iterations.to_string());
            row.push(c.converged_fraction.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
