//! Spatio-temporal autoregression with unknown banded weight matrices,
//!
//! `X_t = A0 X_t B0' + A1 X_{t-1} B1' + E_t`,
//!
//! with `A_k` of bandwidth `kA` (`A0` has a zero diagonal) and `B_k` of
//! bandwidth `kB`. Estimation alternates row-wise least squares for the `B`
//! and `A` factors, starting from a nearest-Kronecker-product factorization of
//! an unstructured Yule-Walker estimate of `C_k = B_k ⊗ A_k`. Bandwidths are
//! chosen with a ratio rule on the residual sums of squares of that
//! unstructured estimate.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, band_support};
use crate::model::{self, FitConfig, StarModel};
use crate::tensor::{self, LagCovariances, MatrixTimeSeries, NormSide};

/// Banded coefficient factors of both lags.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedStarModel {
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub ka: usize,
    pub kb: usize,
}

impl BandedStarModel {
    /// Validates shapes, the band pattern and the zero diagonal of `A0`.
    pub fn new(
        a0: DMatrix<f64>,
        a1: DMatrix<f64>,
        b0: DMatrix<f64>,
        b1: DMatrix<f64>,
        ka: usize,
        kb: usize,
    ) -> Result<Self> {
        let p = a0.nrows();
        let q = b0.nrows();
        for (name, m, d) in [("A0", &a0, p), ("A1", &a1, p), ("B0", &b0, q), ("B1", &b1, q)] {
            if m.shape() != (d, d) {
                return Err(Error::Dimension(format!("{name} must be {d}x{d}, got {:?}", m.shape())));
            }
            if !linalg::all_finite(m) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        check_bandwidths(p, q, ka, kb)?;
        if !linalg::is_banded(&a0, ka, true) || !linalg::is_banded(&a1, ka, false) {
            return Err(Error::InvalidParameter(format!(
                "A factors must be banded with bandwidth {ka} and A0 must have a zero diagonal"
            )));
        }
        if !linalg::is_banded(&b0, kb, false) || !linalg::is_banded(&b1, kb, false) {
            return Err(Error::InvalidParameter(format!("B factors must have bandwidth {kb}")));
        }
        Ok(Self { a0, a1, b0, b1, ka, kb })
    }

    /// Rescale so `||A0||_F = ||A1||_F = 1`, moving the scale into `B0`, `B1`.
    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        normalize_pair(&mut out.a0, &mut out.b0)?;
        normalize_pair(&mut out.a1, &mut out.b1)?;
        Ok(out)
    }

    /// `B_k ⊗ A_k`.
    pub fn coefficient_product(&self, lag: usize) -> DMatrix<f64> {
        match lag {
            0 => tensor::kron(&self.b0, &self.a0),
            _ => tensor::kron(&self.b1, &self.a1),
        }
    }
}

impl StarModel for BandedStarModel {
    fn p(&self) -> usize {
        self.a0.nrows()
    }

    fn q(&self) -> usize {
        self.b0.nrows()
    }

    fn coefficients(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.coefficient_product(0), self.coefficient_product(1))
    }
}

fn normalize_pair(a: &mut DMatrix<f64>, b: &mut DMatrix<f64>) -> Result<()> {
    let norm = a.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Degenerate("A factor has zero Frobenius norm".into()));
    }
    *a /= norm;
    *b *= norm;
    Ok(())
}

fn check_bandwidths(p: usize, q: usize, ka: usize, kb: usize) -> Result<()> {
    if ka >= p.max(1) || kb >= q.max(1) {
        return Err(Error::InvalidParameter(format!(
            "bandwidths must satisfy kA < p and kB < q (kA={ka}, kB={kb}, p={p}, q={q})"
        )));
    }
    Ok(())
}

/// Least-squares update of `(B0, B1)` given `(A0, A1)`; row `j` is fitted on its band.
pub fn step_b(
    covs: &LagCovariances,
    a0: &DMatrix<f64>,
    a1: &DMatrix<f64>,
    kb: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (p, q) = (covs.p(), covs.q());
    if a0.shape() != (p, p) || a1.shape() != (p, p) {
        return Err(Error::Dimension("A factors do not match covariances".into()));
    }
    let mut prod0 = Vec::with_capacity(q * q);
    let mut prod1 = Vec::with_capacity(q * q);
    for i in 0..q {
        for k in 0..q {
            prod0.push(a0 * covs.sigma1(i, k));
            prod1.push(a1 * covs.sigma0(i, k));
        }
    }
    let block = p * p;
    let rows: Vec<_> = (0..q)
        .into_par_iter()
        .map(|j| {
            let support = band_support(j, q, kb, false);
            let s = support.len();
            let mut design = DMatrix::zeros(block * q, 2 * s);
            let mut response = DVector::zeros(block * q);
            for k in 0..q {
                response
                    .rows_mut(k * block, block)
                    .copy_from_slice(covs.sigma1(j, k).as_slice());
                for (c, &i) in support.iter().enumerate() {
                    design
                        .view_mut((k * block, c), (block, 1))
                        .copy_from_slice(prod0[i * q + k].as_slice());
                    design
                        .view_mut((k * block, s + c), (block, 1))
                        .copy_from_slice(prod1[i * q + k].as_slice());
                }
            }
            linalg::least_squares(&design, &response, "step_B", j).map(|b| (support, b))
        })
        .collect();
    let mut b0 = DMatrix::zeros(q, q);
    let mut b1 = DMatrix::zeros(q, q);
    for (j, row) in rows.into_iter().enumerate() {
        let (support, coef) = row?;
        let s = support.len();
        for (c, &i) in support.iter().enumerate() {
            b0[(j, i)] = coef[c];
            b1[(j, i)] = coef[s + c];
        }
    }
    Ok((b0, b1))
}

/// Least-squares update of `(A0, A1)` given `(B0, B1)`; row `m` is fitted on its band,
/// with the diagonal of `A0` excluded.
pub fn step_a(
    covs: &LagCovariances,
    b0: &DMatrix<f64>,
    b1: &DMatrix<f64>,
    ka: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (p, q) = (covs.p(), covs.q());
    if b0.shape() != (q, q) || b1.shape() != (q, q) {
        return Err(Error::Dimension("B factors do not match covariances".into()));
    }
    // mix0[j*q + k] = sum_i b0_ji Sigma_ik(1); its row l is the regressor for a0_{m,l}.
    let mut mix0 = Vec::with_capacity(q * q);
    let mut mix1 = Vec::with_capacity(q * q);
    for j in 0..q {
        for k in 0..q {
            let mut s0 = DMatrix::zeros(p, p);
            let mut s1 = DMatrix::zeros(p, p);
            for i in 0..q {
                if b0[(j, i)] != 0.0 {
                    s0 += covs.sigma1(i, k) * b0[(j, i)];
                }
                if b1[(j, i)] != 0.0 {
                    s1 += covs.sigma0(i, k) * b1[(j, i)];
                }
            }
            mix0.push(s0);
            mix1.push(s1);
        }
    }
    let n_rows = p * q * q;
    let rows: Vec<_> = (0..p)
        .into_par_iter()
        .map(|m| {
            let s0 = band_support(m, p, ka, true);
            let s1 = band_support(m, p, ka, false);
            let mut design = DMatrix::zeros(n_rows, s0.len() + s1.len());
            let mut response = DVector::zeros(n_rows);
            for jk in 0..q * q {
                let (j, k) = (jk / q, jk % q);
                let off = jk * p;
                for c in 0..p {
                    response[off + c] = covs.sigma1(j, k)[(m, c)];
                }
                for (col, &l) in s0.iter().enumerate() {
                    for c in 0..p {
                        design[(off + c, col)] = mix0[jk][(l, c)];
                    }
                }
                for (col, &l) in s1.iter().enumerate() {
                    for c in 0..p {
                        design[(off + c, s0.len() + col)] = mix1[jk][(l, c)];
                    }
                }
            }
            linalg::least_squares(&design, &response, "step_A", m).map(|a| (s0, s1, a))
        })
        .collect();
    let mut a0 = DMatrix::zeros(p, p);
    let mut a1 = DMatrix::zeros(p, p);
    for (m, row) in rows.into_iter().enumerate() {
        let (s0, s1, coef) = row?;
        for (c, &l) in s0.iter().enumerate() {
            a0[(m, l)] = coef[c];
        }
        for (c, &l) in s1.iter().enumerate() {
            a1[(m, l)] = coef[s0.len() + c];
        }
    }
    Ok((a0, a1))
}

/// Row-wise generalized Yule-Walker regressions for the stacked coefficients
/// `C0`, `C1`:
///
/// `Sigma(1)' e_i ≈ Sigma(1)' c0_i + Sigma(0)' c1_i`.
///
/// Regressor columns are the rows of `Sigma(1)` (for `C0`) and `Sigma(0)` (for `C1`);
/// their Gram matrix is formed once and sub-blocks are solved per row and support.
pub struct VecYuleWalker {
    p: usize,
    q: usize,
    /// `[Sigma(1)' | Sigma(0)']`, `pq x 2pq`.
    regressors: DMatrix<f64>,
    gram: DMatrix<f64>,
}

/// Coefficients and residual sum of squares of one row regression.
#[derive(Debug, Clone)]
pub struct RowFit {
    /// Indices into `[C0 row | C1 row]` (`0..2pq`).
    pub support: Vec<usize>,
    pub coef: DVector<f64>,
    pub rss: f64,
    /// The normal matrix was singular; `coef` is the minimum-norm solution.
    pub pseudo_inverse: bool,
}

impl VecYuleWalker {
    pub fn new(covs: &LagCovariances) -> Self {
        let d = covs.p() * covs.q();
        let mut regressors = DMatrix::zeros(d, 2 * d);
        regressors.columns_mut(0, d).copy_from(&covs.full1().transpose());
        regressors.columns_mut(d, d).copy_from(&covs.full0().transpose());
        let gram = regressors.tr_mul(&regressors);
        Self {
            p: covs.p(),
            q: covs.q(),
            regressors,
            gram,
        }
    }

    pub fn dim(&self) -> usize {
        self.p * self.q
    }

    /// Support of row `i` of `[C0 | C1]` implied by `B ⊗ A` with banded factors:
    /// `|r - s| <= kb` between column blocks, `|v - w| <= ka` within, and `w != v` for `C0`.
    pub fn support(&self, i: usize, ka: usize, kb: usize) -> Vec<usize> {
        let (p, q, d) = (self.p, self.q, self.dim());
        let (r, v) = (i / p, i % p);
        let blocks = band_support(r, q, kb, false);
        let mut out = Vec::new();
        for &s in &blocks {
            for w in band_support(v, p, ka, true) {
                out.push(p * s + w);
            }
        }
        for &s in &blocks {
            for w in band_support(v, p, ka, false) {
                out.push(d + p * s + w);
            }
        }
        out
    }

    /// Least-squares fit of row `i` on `support`.
    ///
    /// With `strict`, a singular normal matrix is an error; otherwise the
    /// minimum-norm solution is used and the fit is flagged.
    pub fn fit_row(&self, i: usize, support: &[usize], strict: bool) -> Result<RowFit> {
        let d = self.dim();
        let y = self.regressors.column(i);
        let s = support.len();
        if s == 0 {
            return Ok(RowFit {
                support: Vec::new(),
                coef: DVector::zeros(0),
                rss: y.norm_squared(),
                pseudo_inverse: false,
            });
        }
        let design = self.regressors.select_columns(support);
        let mut pseudo = false;
        let coef = if s <= d {
            let gram = self.gram.select_rows(support).select_columns(support);
            let rhs = DVector::from_iterator(s, support.iter().map(|&l| self.gram[(l, i)]));
            match linalg::solve_normal(&gram, &rhs, "estimate_c", i) {
                Ok(c) => c,
                Err(e) if strict => return Err(e),
                Err(_) => {
                    pseudo = true;
                    linalg::pinv_solve_normal(&gram, &rhs)
                }
            }
        } else {
            if strict {
                return Err(Error::RankDeficient {
                    context: "estimate_c",
                    index: i,
                    rcond: 0.0,
                });
            }
            pseudo = true;
            // More unknowns than equations: c = X' (X X')^{-1} y when X has full row rank.
            let outer = &design * design.transpose();
            let yv = y.into_owned();
            match Cholesky::new(outer.clone()) {
                Some(ch) if linalg::rcond_spd(&outer) >= linalg::RCOND_CUTOFF => design.tr_mul(&ch.solve(&yv)),
                _ => {
                    let gram = self.gram.select_rows(support).select_columns(support);
                    let rhs = design.tr_mul(&yv);
                    linalg::pinv_solve_normal(&gram, &rhs)
                }
            }
        };
        let resid = y - &design * &coef;
        Ok(RowFit {
            support: support.to_vec(),
            coef,
            rss: resid.norm_squared(),
            pseudo_inverse: pseudo,
        })
    }
}

/// Unstructured Yule-Walker estimate of `(C0, C1)` restricted to the support of
/// `B ⊗ A` with bandwidths `(ka, kb)`.
pub fn estimate_c(series: &MatrixTimeSeries, ka: usize, kb: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    estimate_c_covariances(&tensor::lag_covariances(series)?, ka, kb)
}

pub fn estimate_c_covariances(covs: &LagCovariances, ka: usize, kb: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (c0, c1, _) = estimate_c_rows(covs, ka, kb, true)?;
    Ok((c0, c1))
}

/// Like [`estimate_c_covariances`], but rows whose normal matrix is singular get the
/// minimum-norm solution instead of an error. Their indices are returned.
///
/// Some interior rows are not identified even from exact covariances (the rows of
/// `Sigma(1)` and `Sigma(0)` on the support can be linearly dependent), so this is
/// the variant used to start the iterated fit.
pub fn estimate_c_lenient(
    covs: &LagCovariances,
    ka: usize,
    kb: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<usize>)> {
    estimate_c_rows(covs, ka, kb, false)
}

fn estimate_c_rows(
    covs: &LagCovariances,
    ka: usize,
    kb: usize,
    strict: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<usize>)> {
    check_bandwidths(covs.p(), covs.q(), ka, kb)?;
    let yw = VecYuleWalker::new(covs);
    let d = yw.dim();
    let fits: Vec<Result<RowFit>> = (0..d)
        .into_par_iter()
        .map(|i| yw.fit_row(i, &yw.support(i, ka, kb), strict))
        .collect();
    let mut c0 = DMatrix::zeros(d, d);
    let mut c1 = DMatrix::zeros(d, d);
    let mut flagged = Vec::new();
    for (i, fit) in fits.into_iter().enumerate() {
        let fit = fit?;
        if fit.pseudo_inverse {
            flagged.push(i);
        }
        for (&l, &v) in fit.support.iter().zip(fit.coef.iter()) {
            if l < d {
                c0[(i, l)] = v;
            } else {
                c1[(i, l - d)] = v;
            }
        }
    }
    Ok((c0, c1, flagged))
}

/// Nearest-Kronecker factors of `(C0, C1)`, projected onto the band constraints.
#[derive(Debug, Clone)]
pub struct NkpInit {
    pub a0: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub b1: DMatrix<f64>,
}

/// Factor each `C_k` as `B_k ⊗ A_k` with `||A_k||_F = 1`, zero entries outside the
/// bands (and the diagonal of `A0`), then renormalize `A_k` with the scale moved to `B_k`.
pub fn nkp_init(
    c0: &DMatrix<f64>,
    c1: &DMatrix<f64>,
    p: usize,
    q: usize,
    ka: usize,
    kb: usize,
) -> Result<NkpInit> {
    let (mut a0, mut b0) = tensor::nearest_kronecker(c0, p, q, NormSide::AUnitFrobenius)?;
    let (mut a1, mut b1) = tensor::nearest_kronecker(c1, p, q, NormSide::AUnitFrobenius)?;
    linalg::project_band(&mut a0, ka, true);
    linalg::project_band(&mut a1, ka, false);
    linalg::project_band(&mut b0, kb, false);
    linalg::project_band(&mut b1, kb, false);
    normalize_pair(&mut a0, &mut b0)?;
    normalize_pair(&mut a1, &mut b1)?;
    Ok(NkpInit { a0, b0, a1, b1 })
}

/// Result of [`fit_banded`].
#[derive(Debug, Clone)]
pub struct BandedFit {
    /// Final estimate with `||A0||_F = ||A1||_F = 1`.
    pub model: BandedStarModel,
    /// The nearest-Kronecker starting point.
    pub initial: BandedStarModel,
    pub iterations: usize,
    pub final_delta: f64,
    pub converged: bool,
    pub objective: f64,
    /// Objective at the start and after every half-step (B update, then A update).
    pub objective_trace: Vec<f64>,
}

pub fn fit_banded(series: &MatrixTimeSeries, ka: usize, kb: usize, config: &FitConfig) -> Result<BandedFit> {
    fit_banded_covariances(&tensor::lag_covariances(series)?, ka, kb, config)
}

/// Iterated generalized Yule-Walker estimation with known bandwidths.
pub fn fit_banded_covariances(
    covs: &LagCovariances,
    ka: usize,
    kb: usize,
    config: &FitConfig,
) -> Result<BandedFit> {
    config.validate()?;
    let (p, q) = (covs.p(), covs.q());
    check_bandwidths(p, q, ka, kb)?;
    let (c0, c1, _) = estimate_c_lenient(covs, ka, kb)?;
    let init = nkp_init(&c0, &c1, p, q, ka, kb)?;
    let initial = BandedStarModel::new(
        init.a0.clone(),
        init.a1.clone(),
        init.b0.clone(),
        init.b1.clone(),
        ka,
        kb,
    )?;

    let objective = |a0: &DMatrix<f64>, a1: &DMatrix<f64>, b0: &DMatrix<f64>, b1: &DMatrix<f64>| {
        model::yw_objective(covs, &tensor::kron(b0, a0), &tensor::kron(b1, a1))
    };
    let NkpInit {
        mut a0,
        mut b0,
        mut a1,
        mut b1,
    } = init;
    let mut prev0 = tensor::kron(&b0, &a0);
    let mut prev1 = tensor::kron(&b1, &a1);
    let mut trace = vec![objective(&a0, &a1, &b0, &b1)];
    let mut iterations = 0;
    let mut delta = f64::INFINITY;
    while iterations < config.max_iterations {
        iterations += 1;
        (b0, b1) = step_b(covs, &a0, &a1, kb)?;
        trace.push(objective(&a0, &a1, &b0, &b1));
        (a0, a1) = step_a(covs, &b0, &b1, ka)?;
        trace.push(objective(&a0, &a1, &b0, &b1));
        let cur0 = tensor::kron(&b0, &a0);
        let cur1 = tensor::kron(&b1, &a1);
        delta = (&cur0 - &prev0).norm() + (&cur1 - &prev1).norm();
        prev0 = cur0;
        prev1 = cur1;
        if delta <= config.tolerance {
            break;
        }
    }
    let converged = delta <= config.tolerance;
    let model = BandedStarModel::new(a0, a1, b0, b1, ka, kb)?.normalized()?;
    let objective_value = objective(&model.a0, &model.a1, &model.b0, &model.b1);
    Ok(BandedFit {
        model,
        initial,
        iterations,
        final_delta: delta,
        converged,
        objective: objective_value,
        objective_trace: trace,
    })
}

pub fn predict_banded(model: &BandedStarModel, x_last: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.predict(x_last)
}

/// `RSS_i(kA, kB)` for every row `i` of the stacked model and `kA, kB ∈ 0..=K+1`.
///
/// The extra index `K + 1` is what the forward differences at `K` need.
#[derive(Debug, Clone)]
pub struct RssGrid {
    pub k_max: usize,
    pub rows: usize,
    values: Vec<f64>,
    /// Cells `(row, kA, kB)` solved with the pseudo-inverse.
    pub flagged: Vec<(usize, usize, usize)>,
}

impl RssGrid {
    fn side(&self) -> usize {
        self.k_max + 2
    }

    pub fn rss(&self, row: usize, ka: usize, kb: usize) -> f64 {
        let s = self.side();
        self.values[(row * s + ka) * s + kb]
    }

    /// Half the sum of the one-step decreases in the A and B directions.
    pub fn delta_rss(&self, row: usize, ka: usize, kb: usize) -> f64 {
        let here = self.rss(row, ka, kb);
        0.5 * ((here - self.rss(row, ka + 1, kb)) + (here - self.rss(row, ka, kb + 1)))
    }
}

fn check_search_bound(p: usize, q: usize, k_max: usize) -> Result<()> {
    if k_max < 1 || k_max >= p.min(q) {
        return Err(Error::InvalidParameter(format!(
            "bandwidth search bound K must satisfy 1 <= K < min(p, q) = {}, got {k_max}",
            p.min(q)
        )));
    }
    Ok(())
}

pub fn rss_grid(series: &MatrixTimeSeries, k_max: usize) -> Result<RssGrid> {
    rss_grid_covariances(&tensor::lag_covariances(series)?, k_max)
}

pub fn rss_grid_covariances(covs: &LagCovariances, k_max: usize) -> Result<RssGrid> {
    check_search_bound(covs.p(), covs.q(), k_max)?;
    let yw = VecYuleWalker::new(covs);
    let d = yw.dim();
    let side = k_max + 2;
    let per_row: Vec<Result<(Vec<f64>, Vec<(usize, usize, usize)>)>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let mut vals = vec![0.0; side * side];
            let mut flagged = Vec::new();
            for ka in 0..side {
                for kb in 0..side {
                    let fit = yw.fit_row(i, &yw.support(i, ka, kb), false)?;
                    if fit.pseudo_inverse {
                        flagged.push((i, ka, kb));
                    }
                    vals[ka * side + kb] = fit.rss;
                }
            }
            Ok((vals, flagged))
        })
        .collect();
    let mut values = Vec::with_capacity(d * side * side);
    let mut flagged = Vec::new();
    for r in per_row {
        let (v, f) = r?;
        values.extend(v);
        flagged.extend(f);
    }
    Ok(RssGrid {
        k_max,
        rows: d,
        values,
        flagged,
    })
}

/// Selected bandwidths and the statistics behind them.
#[derive(Debug, Clone)]
pub struct BandwidthSelection {
    pub ka_hat: usize,
    pub kb_hat: usize,
    pub k_max: usize,
    pub omega_n: f64,
    /// Joint per-row maximizers `(kA_i, kB_i)` of the ratio statistic.
    pub per_row: Vec<(usize, usize)>,
    /// Per-row maximizers in the A direction at `kB = kb_hat`.
    pub per_row_ka: Vec<usize>,
    /// Ratio statistics, `rows x K x K`, indexed `[(i*K + kA-1)*K + kB-1]`.
    pub per_row_ratios: Vec<f64>,
    pub flagged_cells: usize,
}

impl BandwidthSelection {
    pub fn ratio(&self, row: usize, ka: usize, kb: usize) -> f64 {
        let k = self.k_max;
        self.per_row_ratios[(row * k + ka - 1) * k + kb - 1]
    }
}

/// Ratio statistic `(D_prev + w) / (D_cur + w)`; both terms vanishing gives exactly 1.
fn ratio(prev: f64, cur: f64, omega: f64) -> f64 {
    (prev + omega) / (cur + omega)
}

/// Two-step ratio rule on the RSS differences: `kB` first, jointly over the grid,
/// then `kA` at the selected `kB`. Each step takes the maximum over rows.
pub fn select_from_grid(grid: &RssGrid, omega_n: f64) -> Result<BandwidthSelection> {
    if !(omega_n > 0.0) {
        return Err(Error::InvalidParameter(format!("omega_n must be positive, got {omega_n}")));
    }
    let k = grid.k_max;
    let mut ratios = Vec::with_capacity(grid.rows * k * k);
    let mut per_row = Vec::with_capacity(grid.rows);
    for i in 0..grid.rows {
        let mut best = (1, 1, f64::NEG_INFINITY);
        for ka in 1..=k {
            for kb in 1..=k {
                let r = ratio(grid.delta_rss(i, ka, kb - 1), grid.delta_rss(i, ka, kb), omega_n);
                ratios.push(r);
                if r > best.2 {
                    best = (ka, kb, r);
                }
            }
        }
        per_row.push((best.0, best.1));
    }
    let kb_hat = per_row.iter().map(|x| x.1).max().unwrap_or(1);
    let per_row_ka: Vec<usize> = (0..grid.rows)
        .map(|i| {
            let mut best = (1, f64::NEG_INFINITY);
            for ka in 1..=k {
                let r = ratio(grid.delta_rss(i, ka - 1, kb_hat), grid.delta_rss(i, ka, kb_hat), omega_n);
                if r > best.1 {
                    best = (ka, r);
                }
            }
            best.0
        })
        .collect();
    let ka_hat = per_row_ka.iter().copied().max().unwrap_or(1);
    Ok(BandwidthSelection {
        ka_hat,
        kb_hat,
        k_max: k,
        omega_n,
        per_row,
        per_row_ka,
        per_row_ratios: ratios,
        flagged_cells: grid.flagged.len(),
    })
}

pub fn select_bandwidths_covariances(covs: &LagCovariances, k_max: usize, omega_n: f64) -> Result<BandwidthSelection> {
    let grid = rss_grid_covariances(covs, k_max)?;
    select_from_grid(&grid, omega_n)
}

/// Bandwidth selection from a series with `omega_n = omega_factor * pq / n`.
pub fn select_bandwidths(series: &MatrixTimeSeries, k_max: usize, omega_factor: f64) -> Result<BandwidthSelection> {
    let omega_n = omega_factor * (series.p() * series.q()) as f64 / series.n() as f64;
    select_bandwidths_covariances(&tensor::lag_covariances(series)?, k_max, omega_n)
}

/// JSON artifact for a fitted banded model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandedModelJson {
    #[serde(rename = "A0")]
    pub a0: Vec<Vec<f64>>,
    #[serde(rename = "A1")]
    pub a1: Vec<Vec<f64>>,
    #[serde(rename = "B0")]
    pub b0: Vec<Vec<f64>>,
    #[serde(rename = "B1")]
    pub b1: Vec<Vec<f64>>,
    #[serde(rename = "kA")]
    pub ka: usize,
    #[serde(rename = "kB")]
    pub kb: usize,
    pub norm_convention: String,
    pub iterations: usize,
    pub objective: f64,
    pub final_delta: f64,
    pub converged: bool,
}

impl BandedFit {
    pub fn to_json(&self) -> BandedModelJson {
        let m = &self.model;
        BandedModelJson {
            a0: model::matrix_rows(&m.a0),
            a1: model::matrix_rows(&m.a1),
            b0: model::matrix_rows(&m.b0),
            b1: model::matrix_rows(&m.b1),
            ka: m.ka,
            kb: m.kb,
            norm_convention: "frobenius(A_k) = 1".into(),
            iterations: self.iterations,
            objective: self.objective,
            final_delta: self.final_delta,
            converged: self.converged,
        }
    }
}

impl BandedModelJson {
    pub fn to_model(&self) -> Result<BandedStarModel> {
        BandedStarModel::new(
            model::matrix_from_rows(&self.a0)?,
            model::matrix_from_rows(&self.a1)?,
            model::matrix_from_rows(&self.b0)?,
            model::matrix_from_rows(&self.b1)?,
            self.ka,
            self.kb,
        )
    }
}

/// Bandwidth-selection report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandwidthReportJson {
    #[serde(rename = "kA_hat")]
    pub ka_hat: usize,
    #[serde(rename = "kB_hat")]
    pub kb_hat: usize,
    pub omega_n: f64,
    #[serde(rename = "K")]
    pub k_max: usize,
    pub per_row_votes: RowVotes,
    pub flagged_cells: usize,
}

/// Histograms of per-row selections; entry `k - 1` counts rows voting for `k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowVotes {
    #[serde(rename = "kA")]
    pub ka: Vec<usize>,
    #[serde(rename = "kB")]
    pub kb: Vec<usize>,
}

impl BandwidthSelection {
    pub fn to_json(&self) -> BandwidthReportJson {
        let mut ka = vec![0; self.k_max];
        let mut kb = vec![0; self.k_max];
        for &a in &self.per_row_ka {
            ka[a - 1] += 1;
        }
        for &(_, b) in &self.per_row {
            kb[b - 1] += 1;
        }
        BandwidthReportJson {
            ka_hat: self.ka_hat,
            kb_hat: self.kb_hat,
            omega_n: self.omega_n,
            k_max: self.k_max,
            per_row_votes: RowVotes { ka, kb },
            flagged_cells: self.flagged_cells,
        }
    }
}
