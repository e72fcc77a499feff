//! Spatio-temporal autoregression with known weight matrices and diagonal
//! coefficients,
//!
//! `X_t = D(a0) W0 X_t V0' D(b0) + D(a1) W1 X_{t-1} V1' D(b1) + E_t`,
//!
//! estimated by alternating two-parameter least-squares problems derived from
//! the Yule-Walker equations.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, FitConfig, StarModel};
use crate::tensor::{self, LagCovariances, MatrixTimeSeries};

/// The four known weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagWeights {
    pub w0: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub v0: DMatrix<f64>,
    pub v1: DMatrix<f64>,
}

fn band_matrix(n: usize, value: f64, include_diagonal: bool) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let d = i.abs_diff(j);
        if d <= 2 && (include_diagonal || d > 0) {
            value
        } else {
            0.0
        }
    })
}

impl DiagWeights {
    pub fn new(w0: DMatrix<f64>, w1: DMatrix<f64>, v0: DMatrix<f64>, v1: DMatrix<f64>) -> Result<Self> {
        let p = w0.nrows();
        let q = v0.nrows();
        for (name, m, d) in [("W0", &w0, p), ("W1", &w1, p), ("V0", &v0, q), ("V1", &v1, q)] {
            if m.shape() != (d, d) {
                return Err(Error::Dimension(format!("{name} must be {d}x{d}, got {:?}", m.shape())));
            }
            if !linalg::all_finite(m) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        if (0..p).any(|i| w0[(i, i)] != 0.0) {
            return Err(Error::InvalidParameter("W0 must have a zero diagonal".into()));
        }
        Ok(Self { w0, w1, v0, v1 })
    }

    pub fn p(&self) -> usize {
        self.w0.nrows()
    }

    pub fn q(&self) -> usize {
        self.v0.nrows()
    }

    /// Simulation design: `W0` has ones on the first two off-diagonals on each side,
    /// `V0` additionally on the main diagonal, and `W1`, `V1` carry 0.5 on the
    /// main diagonal and the first two off-diagonals.
    pub fn simulation_design(p: usize, q: usize) -> Self {
        Self {
            w0: band_matrix(p, 1.0, false),
            w1: band_matrix(p, 0.5, true),
            v0: band_matrix(q, 1.0, true),
            v1: band_matrix(q, 0.5, true),
        }
    }

    /// Volume-application weights: ones on the first two off-diagonals, zero elsewhere,
    /// for all four matrices.
    pub fn application(p: usize, q: usize) -> Self {
        Self {
            w0: band_matrix(p, 1.0, false),
            w1: band_matrix(p, 1.0, false),
            v0: band_matrix(q, 1.0, false),
            v1: band_matrix(q, 1.0, false),
        }
    }
}

/// Known weights plus the four unknown coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagStarModel {
    pub weights: DiagWeights,
    pub alpha0: DVector<f64>,
    pub alpha1: DVector<f64>,
    pub beta0: DVector<f64>,
    pub beta1: DVector<f64>,
}

impl DiagStarModel {
    pub fn new(
        weights: DiagWeights,
        alpha0: DVector<f64>,
        alpha1: DVector<f64>,
        beta0: DVector<f64>,
        beta1: DVector<f64>,
    ) -> Result<Self> {
        let (p, q) = (weights.p(), weights.q());
        if alpha0.len() != p || alpha1.len() != p || beta0.len() != q || beta1.len() != q {
            return Err(Error::Dimension(format!(
                "coefficient lengths must be p={p} (alpha) and q={q} (beta)"
            )));
        }
        Ok(Self {
            weights,
            alpha0,
            alpha1,
            beta0,
            beta1,
        })
    }

    /// `D(a_k) W_k`, the row-side factor of lag `k`.
    pub fn row_factor(&self, lag: usize) -> DMatrix<f64> {
        match lag {
            0 => scale_rows(&self.weights.w0, &self.alpha0),
            _ => scale_rows(&self.weights.w1, &self.alpha1),
        }
    }

    /// `D(b_k) V_k`, the column-side factor of lag `k`.
    pub fn col_factor(&self, lag: usize) -> DMatrix<f64> {
        match lag {
            0 => scale_rows(&self.weights.v0, &self.beta0),
            _ => scale_rows(&self.weights.v1, &self.beta1),
        }
    }

    /// `D(b_k) ⊗ D(a_k)`, the identifiable coefficient product of lag `k`.
    pub fn coefficient_product(&self, lag: usize) -> DMatrix<f64> {
        match lag {
            0 => diag_kron(&self.beta0, &self.alpha0),
            _ => diag_kron(&self.beta1, &self.alpha1),
        }
    }
}

impl StarModel for DiagStarModel {
    fn p(&self) -> usize {
        self.weights.p()
    }

    fn q(&self) -> usize {
        self.weights.q()
    }

    fn coefficients(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            tensor::kron(&self.col_factor(0), &self.row_factor(0)),
            tensor::kron(&self.col_factor(1), &self.row_factor(1)),
        )
    }
}

fn scale_rows(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= d[i];
    }
    out
}

/// `D(b) ⊗ D(a)` as a dense matrix.
pub fn diag_kron(beta: &DVector<f64>, alpha: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&kron_vec(beta, alpha))
}

/// Diagonal of `D(b) ⊗ D(a)`.
fn kron_vec(beta: &DVector<f64>, alpha: &DVector<f64>) -> DVector<f64> {
    let p = alpha.len();
    DVector::from_fn(beta.len() * p, |idx, _| beta[idx / p] * alpha[idx % p])
}

/// Least-squares update of `(beta0, beta1)` given `(alpha0, alpha1)`.
///
/// For each column `j`, regresses `Y_bj = (vec Sigma_j1(1); ...; vec Sigma_jq(1))`
/// on the two `p^2 q` columns built from `D(a0) W0 Sigma_ik(1)` and `D(a1) W1 Sigma_ik(0)`.
pub fn step_beta(
    covs: &LagCovariances,
    weights: &DiagWeights,
    alpha0: &DVector<f64>,
    alpha1: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (p, q) = (covs.p(), covs.q());
    check_dims(covs, weights)?;
    let a0w0 = scale_rows(&weights.w0, alpha0);
    let a1w1 = scale_rows(&weights.w1, alpha1);
    // prod0[i*q + k] = D(a0) W0 Sigma_ik(1), prod1 likewise with lag 0.
    let mut prod0 = Vec::with_capacity(q * q);
    let mut prod1 = Vec::with_capacity(q * q);
    for i in 0..q {
        for k in 0..q {
            prod0.push(&a0w0 * covs.sigma1(i, k));
            prod1.push(&a1w1 * covs.sigma0(i, k));
        }
    }
    let block = p * p;
    let mut beta0 = DVector::zeros(q);
    let mut beta1 = DVector::zeros(q);
    let mut design = DMatrix::zeros(block * q, 2);
    let mut response = DVector::zeros(block * q);
    for j in 0..q {
        design.fill(0.0);
        for k in 0..q {
            response
                .rows_mut(k * block, block)
                .copy_from_slice(covs.sigma1(j, k).as_slice());
            for i in 0..q {
                let (v0, v1) = (weights.v0[(j, i)], weights.v1[(j, i)]);
                if v0 != 0.0 {
                    let mut col = design.view_mut((k * block, 0), (block, 1));
                    for (dst, src) in col.iter_mut().zip(prod0[i * q + k].iter()) {
                        *dst += v0 * src;
                    }
                }
                if v1 != 0.0 {
                    let mut col = design.view_mut((k * block, 1), (block, 1));
                    for (dst, src) in col.iter_mut().zip(prod1[i * q + k].iter()) {
                        *dst += v1 * src;
                    }
                }
            }
        }
        let b = linalg::least_squares(&design, &response, "step_beta", j)?;
        beta0[j] = b[0];
        beta1[j] = b[1];
    }
    Ok((beta0, beta1))
}

/// Least-squares update of `(alpha0, alpha1)` given `(beta0, beta1)`.
///
/// For each row `m`, regresses the stacked rows `Sigma_jk(1)' e_m` on
/// `sum_i v0_ji b0_j Sigma_ik(1)' W0' e_m` and `sum_i v1_ji b1_j Sigma_ik(0)' W1' e_m`.
pub fn step_alpha(
    covs: &LagCovariances,
    weights: &DiagWeights,
    beta0: &DVector<f64>,
    beta1: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (p, q) = (covs.p(), covs.q());
    check_dims(covs, weights)?;
    if beta0.len() != q || beta1.len() != q {
        return Err(Error::Dimension("beta length must equal q".into()));
    }
    let mut w0s = Vec::with_capacity(q * q);
    let mut w1s = Vec::with_capacity(q * q);
    for i in 0..q {
        for k in 0..q {
            w0s.push(&weights.w0 * covs.sigma1(i, k));
            w1s.push(&weights.w1 * covs.sigma0(i, k));
        }
    }
    // t0[j*q + k] = b0_j sum_i v0_ji W0 Sigma_ik(1); row m of it is the regressor block.
    let mut t0 = Vec::with_capacity(q * q);
    let mut t1 = Vec::with_capacity(q * q);
    for j in 0..q {
        for k in 0..q {
            let mut s0 = DMatrix::zeros(p, p);
            let mut s1 = DMatrix::zeros(p, p);
            for i in 0..q {
                s0 += &w0s[i * q + k] * weights.v0[(j, i)];
                s1 += &w1s[i * q + k] * weights.v1[(j, i)];
            }
            t0.push(s0 * beta0[j]);
            t1.push(s1 * beta1[j]);
        }
    }
    let rows = p * q * q;
    let mut alpha0 = DVector::zeros(p);
    let mut alpha1 = DVector::zeros(p);
    let mut design = DMatrix::zeros(rows, 2);
    let mut response = DVector::zeros(rows);
    for m in 0..p {
        for j in 0..q {
            for k in 0..q {
                let off = (j * q + k) * p;
                let jk = j * q + k;
                for c in 0..p {
                    response[off + c] = covs.sigma1(j, k)[(m, c)];
                    design[(off + c, 0)] = t0[jk][(m, c)];
                    design[(off + c, 1)] = t1[jk][(m, c)];
                }
            }
        }
        let a = linalg::least_squares(&design, &response, "step_alpha", m)?;
        alpha0[m] = a[0];
        alpha1[m] = a[1];
    }
    Ok((alpha0, alpha1))
}

fn check_dims(covs: &LagCovariances, weights: &DiagWeights) -> Result<()> {
    if covs.p() != weights.p() || covs.q() != weights.q() {
        return Err(Error::Dimension(format!(
            "weights are for p={}, q={}, covariances for p={}, q={}",
            weights.p(),
            weights.q(),
            covs.p(),
            covs.q()
        )));
    }
    Ok(())
}

/// Result of [`fit_diag`].
#[derive(Debug, Clone)]
pub struct DiagFit {
    /// Estimated model, rescaled so that `||alpha0|| = ||alpha1|| = 1`.
    pub model: DiagStarModel,
    pub iterations: usize,
    /// Summed Frobenius change of the coefficient products at the last iteration.
    pub final_delta: f64,
    pub converged: bool,
    /// Final value of the Yule-Walker objective.
    pub objective: f64,
    /// Objective after every half-step (beta update, then alpha update).
    pub objective_trace: Vec<f64>,
}

/// Iterated generalized Yule-Walker fit from a series.
pub fn fit_diag(series: &MatrixTimeSeries, weights: &DiagWeights, config: &FitConfig) -> Result<DiagFit> {
    let covs = tensor::lag_covariances(series)?;
    fit_diag_covariances(&covs, weights, config)
}

/// Iterated generalized Yule-Walker fit from given (sample or population) covariances.
pub fn fit_diag_covariances(
    covs: &LagCovariances,
    weights: &DiagWeights,
    config: &FitConfig,
) -> Result<DiagFit> {
    config.validate()?;
    check_dims(covs, weights)?;
    let p = covs.p();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut alpha0 = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
    let mut alpha1 = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));

    let objective = |a0: &DVector<f64>, a1: &DVector<f64>, b0: &DVector<f64>, b1: &DVector<f64>| {
        let c0 = tensor::kron(&scale_rows(&weights.v0, b0), &scale_rows(&weights.w0, a0));
        let c1 = tensor::kron(&scale_rows(&weights.v1, b1), &scale_rows(&weights.w1, a1));
        model::yw_objective(covs, &c0, &c1)
    };

    let mut prev0 = DVector::zeros(p * covs.q());
    let mut prev1 = DVector::zeros(p * covs.q());
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut delta = f64::INFINITY;
    let (mut beta0, mut beta1) = (DVector::zeros(covs.q()), DVector::zeros(covs.q()));
    while iterations < config.max_iterations {
        iterations += 1;
        (beta0, beta1) = step_beta(covs, weights, &alpha0, &alpha1)?;
        trace.push(objective(&alpha0, &alpha1, &beta0, &beta1));
        (alpha0, alpha1) = step_alpha(covs, weights, &beta0, &beta1)?;
        trace.push(objective(&alpha0, &alpha1, &beta0, &beta1));
        let cur0 = kron_vec(&beta0, &alpha0);
        let cur1 = kron_vec(&beta1, &alpha1);
        delta = (&cur0 - &prev0).norm() + (&cur1 - &prev1).norm();
        prev0 = cur0;
        prev1 = cur1;
        if iterations > 1 && delta <= config.tolerance {
            break;
        }
    }
    let converged = iterations > 1 && delta <= config.tolerance;

    for (a, b) in [(&mut alpha0, &mut beta0), (&mut alpha1, &mut beta1)] {
        let norm = a.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Degenerate("estimated alpha has zero norm".into()));
        }
        *a /= norm;
        *b *= norm;
    }
    let objective_value = objective(&alpha0, &alpha1, &beta0, &beta1);
    let model = DiagStarModel::new(weights.clone(), alpha0, alpha1, beta0, beta1)?;
    Ok(DiagFit {
        model,
        iterations,
        final_delta: delta,
        converged,
        objective: objective_value,
        objective_trace: trace,
    })
}

/// One-step forecast of the diagonal-coefficient model.
pub fn predict_diag(model: &DiagStarModel, x_last: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.predict(x_last)
}

/// JSON artifact for a fitted diagonal-coefficient model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagModelJson {
    pub alpha0: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub provenance: DiagProvenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagProvenance {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub iterations: usize,
    pub objective: f64,
    pub final_delta: f64,
    pub converged: bool,
}

impl DiagFit {
    pub fn to_json(&self, n: usize) -> DiagModelJson {
        let m = &self.model;
        DiagModelJson {
            alpha0: m.alpha0.iter().copied().collect(),
            alpha1: m.alpha1.iter().copied().collect(),
            beta0: m.beta0.iter().copied().collect(),
            beta1: m.beta1.iter().copied().collect(),
            provenance: DiagProvenance {
                n,
                p: m.p(),
                q: m.q(),
                iterations: self.iterations,
                objective: self.objective,
                final_delta: self.final_delta,
                converged: self.converged,
            },
        }
    }
}

/// Read a dense weight matrix from `i,j,value` CSV (1-based).
pub fn read_weight_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["i", "j", "value"] {
        return Err(Error::Format("weight header must be i,j,value".into()));
    }
    let mut entries = Vec::new();
    let mut dim = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let i: usize = rec[0].trim().parse().map_err(|_| Error::Format(format!("bad index {:?}", &rec[0])))?;
        let j: usize = rec[1].trim().parse().map_err(|_| Error::Format(format!("bad index {:?}", &rec[1])))?;
        let v: f64 = rec[2].trim().parse().map_err(|_| Error::Format(format!("bad value {:?}", &rec[2])))?;
        if i == 0 || j == 0 {
            return Err(Error::Format("weight indices are 1-based".into()));
        }
        dim = dim.max(i).max(j);
        entries.push((i - 1, j - 1, v));
    }
    if entries.len() != dim * dim {
        return Err(Error::Ingestion(format!(
            "weight matrix must be dense: expected {} entries, got {}",
            dim * dim,
            entries.len()
        )));
    }
    let mut m = DMatrix::from_element(dim, dim, f64::NAN);
    for (i, j, v) in entries {
        if !m[(i, j)].is_nan() {
            return Err(Error::Format(format!("duplicate weight entry ({}, {})", i + 1, j + 1)));
        }
        m[(i, j)] = v;
    }
    Ok(m)
}

pub fn read_weight_csv_path(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_weight_csv(std::fs::File::open(path)?)
}

pub fn write_weight_csv<W: Write>(m: &DMatrix<f64>, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["i", "j", "value"])?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            wtr.write_record(&[(i + 1).to_string(), (j + 1).to_string(), m[(i, j)].to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_model(p: usize, q: usize, seed: u64) -> DiagStarModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let mut draw = |n: usize| DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
            let m = DiagStarModel::new(
                DiagWeights::simulation_design(p, q),
                draw(p),
                draw(p),
                draw(q),
                draw(q),
            )
            .unwrap();
            if m.transition().is_ok() {
                return m;
            }
        }
    }

    #[test]
    fn simulation_weights_pattern() {
        let w = DiagWeights::simulation_design(5, 4);
        assert_eq!(w.w0[(2, 2)], 0.0);
        assert_eq!(w.w0[(2, 0)], 1.0);
        assert_eq!(w.w0[(2, 4)], 1.0);
        assert_eq!(w.w0[(0, 3)], 0.0);
        assert_eq!(w.w1[(2, 2)], 0.5);
        assert_eq!(w.v0[(1, 1)], 1.0);
        assert_eq!(w.v1[(0, 2)], 0.5);
        assert_eq!(w.v1[(0, 3)], 0.0);
    }

    #[test]
    fn nonzero_w0_diagonal_rejected() {
        let w = DiagWeights::simulation_design(3, 3);
        assert!(DiagWeights::new(DMatrix::identity(3, 3), w.w1, w.v0, w.v1).is_err());
    }

    #[test]
    fn zero_covariances_are_rank_deficient() {
        let covs = LagCovariances::from_full(DMatrix::zeros(9, 9), DMatrix::zeros(9, 9), 3, 3).unwrap();
        let w = DiagWeights::simulation_design(3, 3);
        let a = DVector::from_element(3, 1.0);
        assert!(matches!(
            step_beta(&covs, &w, &a, &a),
            Err(Error::RankDeficient { context: "step_beta", index: 0, .. })
        ));
        assert!(matches!(
            step_alpha(&covs, &w, &a, &a),
            Err(Error::RankDeficient { context: "step_alpha", index: 0, .. })
        ));
    }

    #[test]
    fn zero_model_predicts_zero() {
        let w = DiagWeights::simulation_design(3, 2);
        let m = DiagStarModel::new(w, DVector::zeros(3), DVector::zeros(3), DVector::zeros(2), DVector::zeros(2)).unwrap();
        let x = DMatrix::from_element(3, 2, 1.5);
        assert!(predict_diag(&m, &x).unwrap().iter().all(|v| *v == 0.0));
        let m = random_model(3, 3, 1);
        assert!(predict_diag(&m, &DMatrix::zeros(3, 3)).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn population_truth_is_fixed_point_of_steps() {
        let m = random_model(4, 3, 7);
        let covs = tensor::population_lag_covariances(&m.transition().unwrap(), 4, 3).unwrap();
        let (b0, b1) = step_beta(&covs, &m.weights, &m.alpha0, &m.alpha1).unwrap();
        assert!((&b0 - &m.beta0).norm() < 1e-8);
        assert!((&b1 - &m.beta1).norm() < 1e-8);
        let (a0, a1) = step_alpha(&covs, &m.weights, &m.beta0, &m.beta1).unwrap();
        assert!((&a0 - &m.alpha0).norm() < 1e-8);
        assert!((&a1 - &m.alpha1).norm() < 1e-8);
    }

    #[test]
    fn weight_csv_roundtrip() {
        let w = DiagWeights::simulation_design(4, 4).w1;
        let mut buf = Vec::new();
        write_weight_csv(&w, &mut buf).unwrap();
        assert_eq!(read_weight_csv(buf.as_slice()).unwrap(), w);
        assert!(read_weight_csv("i,j,value\n1,1,0\n".replace("1,1,0", "1,2,0").as_bytes()).is_err());
    }
}
