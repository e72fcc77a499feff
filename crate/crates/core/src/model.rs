//! Behaviour shared by the two spatio-temporal autoregressions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, LagCovariances, TransitionForm};

/// A model of the form `vec(X_t) = C0 vec(X_t) + C1 vec(X_{t-1}) + vec(E_t)`.
pub trait StarModel {
    fn p(&self) -> usize;
    fn q(&self) -> usize;

    /// The contemporaneous and lag-one coefficient matrices `(C0, C1)`.
    fn coefficients(&self) -> (DMatrix<f64>, DMatrix<f64>);

    fn transition(&self) -> Result<TransitionForm> {
        let (c0, c1) = self.coefficients();
        tensor::stationarity_check(&c0, &c1)
    }

    /// One-step forecast `(I - C0)^{-1} C1 vec(x_last)`, reshaped to `p x q`.
    fn predict(&self, x_last: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_last.shape() != (self.p(), self.q()) {
            return Err(Error::Dimension(format!(
                "x_last is {:?}, model is {}x{}",
                x_last.shape(),
                self.p(),
                self.q()
            )));
        }
        let (c0, c1) = self.coefficients();
        tensor::one_step_forecast(&c0, &c1, x_last)
    }
}

/// Generalized Yule-Walker objective `||Sigma(1) - C0 Sigma(1) - C1 Sigma(0)||_F^2`.
///
/// Block `(j, k)` of the residual is
/// `Sigma_jk(1) - sum_i b0_ji A0 Sigma_ik(1) - sum_i b1_ji A1 Sigma_ik(0)`, so this is
/// the criterion minimized by both alternating estimators.
pub fn yw_objective(covs: &LagCovariances, c0: &DMatrix<f64>, c1: &DMatrix<f64>) -> f64 {
    let resid = covs.full1() - c0 * covs.full1() - c1 * covs.full0();
    resid.norm_squared()
}

/// Estimation controls for the iterated estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Stop once the summed Kronecker-product change falls to or below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Seed for random initial values.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 200,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Row-major nested representation used in JSON artifacts.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Format("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}
