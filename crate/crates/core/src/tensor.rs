//! Core containers and shared numerical primitives: the matrix time series,
//! lag covariances, Kronecker products and the nearest-Kronecker-product
//! rearrangement, stationarity checks and population covariances.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// A length-`n` sequence of `p x q` observation matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTimeSeries {
    frames: Vec<DMatrix<f64>>,
    p: usize,
    q: usize,
}

impl MatrixTimeSeries {
    pub fn new(frames: Vec<DMatrix<f64>>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::Dimension(format!(
                "a series needs at least 2 observations, got {}",
                frames.len()
            )));
        }
        let (p, q) = frames[0].shape();
        if p == 0 || q == 0 {
            return Err(Error::Dimension("empty observation matrix".into()));
        }
        for (t, f) in frames.iter().enumerate() {
            if f.shape() != (p, q) {
                return Err(Error::Dimension(format!(
                    "observation {t} is {:?}, expected {:?}",
                    f.shape(),
                    (p, q)
                )));
            }
            if !linalg::all_finite(f) {
                return Err(Error::NonFinite(format!("observation {t}")));
            }
        }
        Ok(Self { frames, p, q })
    }

    pub fn zeros(n: usize, p: usize, q: usize) -> Result<Self> {
        Self::new(vec![DMatrix::zeros(p, q); n])
    }

    pub fn n(&self) -> usize {
        self.frames.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn frame(&self, t: usize) -> &DMatrix<f64> {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[DMatrix<f64>] {
        &self.frames
    }

    pub fn last(&self) -> &DMatrix<f64> {
        &self.frames[self.frames.len() - 1]
    }

    /// Observations stacked as columns `vec(X_t)` of a `pq x n` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let d = self.p * self.q;
        let mut out = DMatrix::zeros(d, self.n());
        for (t, f) in self.frames.iter().enumerate() {
            out.column_mut(t).copy_from_slice(f.as_slice());
        }
        out
    }

    /// Read the `t,i,j,value` fixture format (1-based, dense).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["t", "i", "j", "value"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
            return Err(Error::Format(format!(
                "series header must be t,i,j,value, got {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut rows = Vec::new();
        let (mut n, mut p, mut q) = (0usize, 0usize, 0usize);
        for rec in rdr.records() {
            let rec = rec?;
            let parse_idx = |k: usize| -> Result<usize> {
                let v: usize = rec[k]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad index {:?}", &rec[k])))?;
                if v == 0 {
                    return Err(Error::Format("indices are 1-based".into()));
                }
                Ok(v)
            };
            let (t, i, j) = (parse_idx(0)?, parse_idx(1)?, parse_idx(2)?);
            let value: f64 = rec[3]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad value {:?}", &rec[3])))?;
            n = n.max(t);
            p = p.max(i);
            q = q.max(j);
            rows.push((t - 1, i - 1, j - 1, value));
        }
        if rows.len() != n * p * q {
            return Err(Error::Ingestion(format!(
                "series must be dense: expected {} rows for n={n}, p={p}, q={q}, got {}",
                n * p * q,
                rows.len()
            )));
        }
        let mut frames = vec![DMatrix::from_element(p, q, f64::NAN); n];
        let mut seen = vec![false; n * p * q];
        for (t, i, j, v) in rows {
            let key = (t * p + i) * q + j;
            if seen[key] {
                return Err(Error::Format(format!(
                    "duplicate entry t={}, i={}, j={}",
                    t + 1,
                    i + 1,
                    j + 1
                )));
            }
            seen[key] = true;
            frames[t][(i, j)] = v;
        }
        Self::new(frames)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t", "i", "j", "value"])?;
        for (t, f) in self.frames.iter().enumerate() {
            for i in 0..self.p {
                for j in 0..self.q {
                    wtr.write_record(&[
                        (t + 1).to_string(),
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        f[(i, j)].to_string(),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Sample (or population) lag-0 and lag-1 covariances in block and stacked form.
///
/// Block `(j, k)` of `full1` is `Sigma_jk(1) = Cov(X_{t,.j}, X_{t-1,.k})`.
#[derive(Debug, Clone)]
pub struct LagCovariances {
    p: usize,
    q: usize,
    sigma0: Vec<DMatrix<f64>>,
    sigma1: Vec<DMatrix<f64>>,
    full0: DMatrix<f64>,
    full1: DMatrix<f64>,
}

impl LagCovariances {
    /// Assemble from stacked `pq x pq` forms; `full0` is symmetrized.
    pub fn from_full(full0: DMatrix<f64>, full1: DMatrix<f64>, p: usize, q: usize) -> Result<Self> {
        let d = p * q;
        if full0.shape() != (d, d) || full1.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "covariances must be {d}x{d}, got {:?} and {:?}",
                full0.shape(),
                full1.shape()
            )));
        }
        let mut full0 = full0;
        for i in 0..d {
            for j in (i + 1)..d {
                let s = 0.5 * (full0[(i, j)] + full0[(j, i)]);
                full0[(i, j)] = s;
                full0[(j, i)] = s;
            }
        }
        let block = |m: &DMatrix<f64>, j: usize, k: usize| -> DMatrix<f64> {
            m.view((j * p, k * p), (p, p)).into_owned()
        };
        let mut sigma0 = Vec::with_capacity(q * q);
        let mut sigma1 = Vec::with_capacity(q * q);
        for j in 0..q {
            for k in 0..q {
                sigma0.push(block(&full0, j, k));
                sigma1.push(block(&full1, j, k));
            }
        }
        Ok(Self {
            p,
            q,
            sigma0,
            sigma1,
            full0,
            full1,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// `Sigma_jk(0)`, 0-based column indices.
    pub fn sigma0(&self, j: usize, k: usize) -> &DMatrix<f64> {
        &self.sigma0[j * self.q + k]
    }

    /// `Sigma_jk(1)`, 0-based column indices.
    pub fn sigma1(&self, j: usize, k: usize) -> &DMatrix<f64> {
        &self.sigma1[j * self.q + k]
    }

    pub fn full0(&self) -> &DMatrix<f64> {
        &self.full0
    }

    pub fn full1(&self) -> &DMatrix<f64> {
        &self.full1
    }
}

/// Sample lag covariances with divisor `n`: lag 1 sums over `t = 2..n`, lag 0 over `t = 1..n`.
pub fn lag_covariances(series: &MatrixTimeSeries) -> Result<LagCovariances> {
    let n = series.n();
    if n < 2 {
        return Err(Error::Dimension("lag covariances need n >= 2".into()));
    }
    let x = series.stacked();
    let scale = 1.0 / n as f64;
    let full0 = (&x * x.transpose()) * scale;
    let cur = x.columns(1, n - 1);
    let prev = x.columns(0, n - 1);
    let full1 = (cur * prev.transpose()) * scale;
    LagCovariances::from_full(full0, full1, series.p(), series.q())
}

/// Kronecker product `left ⊗ right`.
pub fn kron(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    left.kronecker(right)
}

fn check_kron_shape(c: &DMatrix<f64>, p: usize, q: usize) -> Result<()> {
    let d = p * q;
    if c.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "expected a {d}x{d} matrix for p={p}, q={q}, got {:?}",
            c.shape()
        )));
    }
    Ok(())
}

/// Van Loan rearrangement: maps `B ⊗ A` (B: q x q, A: p x p) to `vec(A) vec(B)'`.
///
/// Entry `(p*r + v, p*s + w)` of `C` lands at `(p*w + v, q*s + r)`.
pub fn rearrange(c: &DMatrix<f64>, p: usize, q: usize) -> Result<DMatrix<f64>> {
    check_kron_shape(c, p, q)?;
    let mut out = DMatrix::zeros(p * p, q * q);
    for s in 0..q {
        for r in 0..q {
            for w in 0..p {
                for v in 0..p {
                    out[(p * w + v, q * s + r)] = c[(p * r + v, p * s + w)];
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`rearrange`].
pub fn unrearrange(r: &DMatrix<f64>, p: usize, q: usize) -> Result<DMatrix<f64>> {
    if r.shape() != (p * p, q * q) {
        return Err(Error::Dimension(format!(
            "expected a {}x{} matrix, got {:?}",
            p * p,
            q * q,
            r.shape()
        )));
    }
    let mut out = DMatrix::zeros(p * q, p * q);
    for s in 0..q {
        for r_ in 0..q {
            for w in 0..p {
                for v in 0..p {
                    out[(p * r_ + v, p * s + w)] = r[(p * w + v, q * s + r_)];
                }
            }
        }
    }
    Ok(out)
}

/// Which factor of a nearest-Kronecker solution carries unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSide {
    AUnitFrobenius,
    BUnitFrobenius,
}

/// Leading singular triplet `(u, v, sigma)` of `r` from the symmetric eigenproblem of
/// the smaller Gram matrix. The dense SVD of nalgebra 0.35 can return wrong factors
/// for exactly rank-deficient inputs, which exact Kronecker products always are.
fn leading_singular_triplet(r: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>, f64) {
    let tall = r.nrows() >= r.ncols();
    let gram = if tall { r.transpose() * r } else { r * r.transpose() };
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.imax();
    let x = eig.eigenvectors.column(top).into_owned();
    let y = if tall { r * &x } else { r.transpose() * &x };
    let sigma = y.norm();
    let y = if sigma > 0.0 { y / sigma } else { y };
    if tall {
        (y, x, sigma)
    } else {
        (x, y, sigma)
    }
}

/// Best `B ⊗ A` approximation of `c` in Frobenius norm, via the leading
/// singular triplet of the rearranged matrix.
///
/// The unit-norm side is chosen by `side`; signs are fixed so that the
/// largest-magnitude entry of the unit-norm factor is positive.
pub fn nearest_kronecker(
    c: &DMatrix<f64>,
    p: usize,
    q: usize,
    side: NormSide,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r = rearrange(c, p, q)?;
    if !linalg::all_finite(&r) {
        return Err(Error::NonFinite("nearest_kronecker input".into()));
    }
    if r.iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate("all-zero matrix has no Kronecker factor".into()));
    }
    let (u, v, d1) = leading_singular_triplet(&r);
    if !(d1 > 0.0) {
        return Err(Error::Degenerate("leading singular value is zero".into()));
    }
    let (mut a, mut b) = match side {
        NormSide::AUnitFrobenius => (linalg::unvec(&u, p, p), linalg::unvec(&v, q, q) * d1),
        NormSide::BUnitFrobenius => (linalg::unvec(&u, p, p) * d1, linalg::unvec(&v, q, q)),
    };
    let unit = match side {
        NormSide::AUnitFrobenius => &a,
        NormSide::BUnitFrobenius => &b,
    };
    let pivot = unit
        .iter()
        .fold(0.0_f64, |acc, &x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 {
        a.neg_mut();
        b.neg_mut();
    }
    Ok((a, b))
}

/// Reduced VAR(1) form `vec(X_t) = psi vec(X_{t-1}) + G vec(E_t)`.
#[derive(Debug, Clone)]
pub struct TransitionForm {
    /// `(I - C0)^{-1} C1`.
    pub psi: DMatrix<f64>,
    /// `G = (I - C0)^{-1}`.
    pub innov_transform: DMatrix<f64>,
    /// Covariance of `vec(E_t)`.
    pub innov_cov: DMatrix<f64>,
}

impl TransitionForm {
    pub fn dim(&self) -> usize {
        self.psi.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.psi)
    }

    pub fn with_innov_cov(mut self, cov: DMatrix<f64>) -> Result<Self> {
        if cov.shape() != self.psi.shape() {
            return Err(Error::Dimension("innovation covariance shape".into()));
        }
        self.innov_cov = cov;
        Ok(self)
    }
}

/// Condition number above which `I - C0` is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Verify `I - C0` is invertible and `(I - C0)^{-1} C1` has spectral radius below one.
pub fn stationarity_check(c0: &DMatrix<f64>, c1: &DMatrix<f64>) -> Result<TransitionForm> {
    let d = c0.nrows();
    if c0.shape() != (d, d) || c1.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "C0 {:?} and C1 {:?} must be equal square matrices",
            c0.shape(),
            c1.shape()
        )));
    }
    let m = DMatrix::identity(d, d) - c0;
    let condition = linalg::condition_number(&m);
    if !(condition < MAX_CONDITION) {
        return Err(Error::NotInvertible { condition });
    }
    let g = m.try_inverse().ok_or(Error::NotInvertible { condition })?;
    let psi = &g * c1;
    let radius = linalg::spectral_radius(&psi);
    if !(radius < 1.0) {
        return Err(Error::NonStationary { radius });
    }
    Ok(TransitionForm {
        psi,
        innov_transform: g,
        innov_cov: DMatrix::identity(d, d),
    })
}

const LYAPUNOV_TOL: f64 = 1e-12;
const LYAPUNOV_MAX_ITER: usize = 100_000;

/// Stationary `Sigma_X(0)` and `Sigma_X(1) = psi Sigma_X(0)` by fixed-point iteration
/// on `Sigma = psi Sigma psi' + G Sigma_E G'`.
pub fn population_covariances(form: &TransitionForm) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let radius = form.spectral_radius();
    if !(radius < 1.0) {
        return Err(Error::NonStationary { radius });
    }
    let g = &form.innov_transform;
    let q = g * &form.innov_cov * g.transpose();
    let psi_t = form.psi.transpose();
    let mut sigma = q.clone();
    for _ in 0..LYAPUNOV_MAX_ITER {
        let next = &form.psi * &sigma * &psi_t + &q;
        let change = (&next - &sigma).norm();
        let scale = next.norm();
        sigma = next;
        if change <= LYAPUNOV_TOL * scale || scale == 0.0 {
            let lag1 = &form.psi * &sigma;
            return Ok((sigma, lag1));
        }
    }
    Err(Error::NoConvergence {
        context: "stationary covariance iteration",
        iterations: LYAPUNOV_MAX_ITER,
    })
}

/// Population lag covariances of a stationary model, in the same layout as [`lag_covariances`].
pub fn population_lag_covariances(form: &TransitionForm, p: usize, q: usize) -> Result<LagCovariances> {
    let (s0, s1) = population_covariances(form)?;
    LagCovariances::from_full(s0, s1, p, q)
}

/// `vec(X_hat) = psi vec(x_last)` solved through `(I - C0)` without forming the inverse.
pub fn one_step_forecast(c0: &DMatrix<f64>, c1: &DMatrix<f64>, x_last: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = c0.nrows();
    if x_last.len() != d {
        return Err(Error::Dimension(format!(
            "x_last has {} entries, model expects {d}",
            x_last.len()
        )));
    }
    let m = DMatrix::identity(d, d) - c0;
    let condition = linalg::condition_number(&m);
    if !(condition < MAX_CONDITION) {
        return Err(Error::NotInvertible { condition });
    }
    let rhs: DVector<f64> = c1 * linalg::vec(x_last);
    let sol = m.lu().solve(&rhs).ok_or(Error::NotInvertible { condition })?;
    Ok(linalg::unvec(&sol, x_last.nrows(), x_last.ncols()))
}
