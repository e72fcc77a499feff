//! Baseline and model forecasts of next-day bucket volumes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::panel::{parse_time, preprocess, VolumePanel, DATE_FORMAT, DEFAULT_EPSILON, TIME_FORMAT};
use crate::banded;
use crate::diag::{self, DiagWeights};
use crate::error::{Error, Result};
use crate::model::{FitConfig, StarModel};

/// `(1/L) sum_{d=t-L}^{t-1} V_{d,s}`: the forecast for day `t` from the `L` days before it.
pub fn sma_forecast(panel: &VolumePanel, t: usize, s: usize, asset: usize, lookback: usize) -> Result<f64> {
    if lookback == 0 {
        return Err(Error::InvalidParameter("lookback must be >= 1".into()));
    }
    if t < lookback || t > panel.n_days() {
        return Err(Error::InsufficientHistory {
            needed: lookback,
            available: t.min(panel.n_days()),
        });
    }
    Ok((t - lookback..t).map(|d| panel.volume(d, s, asset)).sum::<f64>() / lookback as f64)
}

/// Adjusted SMA for day `t`: the SMA scaled by realized over predicted volume in the
/// buckets of day `t` before `s`.
///
/// Returns the value and whether the plain SMA was used because the predicted prefix
/// sums to zero. For `s = 0` there is no prefix and the plain SMA is returned unflagged.
pub fn adj_sma_forecast(
    panel: &VolumePanel,
    t: usize,
    s: usize,
    asset: usize,
    lookback: usize,
) -> Result<(f64, bool)> {
    let sma = sma_forecast(panel, t, s, asset, lookback)?;
    if s == 0 {
        return Ok((sma, false));
    }
    if t >= panel.n_days() {
        return Err(Error::InvalidParameter(format!("day {t} has no realized prefix")));
    }
    let mut realized = 0.0;
    let mut predicted = 0.0;
    for h in 0..s {
        realized += panel.volume(t, h, asset);
        predicted += sma_forecast(panel, t, h, asset, lookback)?;
    }
    if predicted > 0.0 {
        Ok((realized / predicted * sma, false))
    } else {
        Ok((sma, true))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sma,
    AdjSma,
    DiagStar,
    BandedStar,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sma => "sma",
            Method::AdjSma => "adj_sma",
            Method::DiagStar => "diag_star",
            Method::BandedStar => "banded_star",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sma" => Ok(Method::Sma),
            "adj_sma" => Ok(Method::AdjSma),
            "diag_star" => Ok(Method::DiagStar),
            "banded_star" => Ok(Method::BandedStar),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }

    pub fn is_model(self) -> bool {
        matches!(self, Method::DiagStar | Method::BandedStar)
    }
}

/// Settings of a rolling forecast run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastParams {
    /// SMA lookback in days.
    pub lookback: usize,
    /// Days in the trailing estimation window of the model methods.
    pub fit_window: usize,
    /// Search bound for the banded bandwidths; clamped to `min(p, q) - 1`.
    #[serde(rename = "K")]
    pub k_max: usize,
    pub omega_factor: f64,
    pub epsilon: f64,
    pub fit: FitConfig,
}

impl Default for ForecastParams {
    fn default() -> Self {
        Self {
            lookback: 22,
            fit_window: 60,
            k_max: 4,
            omega_factor: 0.1,
            epsilon: DEFAULT_EPSILON,
            fit: FitConfig::default(),
        }
    }
}

impl ForecastParams {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 {
            return Err(Error::InvalidParameter("lookback must be >= 1".into()));
        }
        if self.fit_window < 3 {
            return Err(Error::InvalidParameter("fit_window must be >= 3".into()));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidParameter("K must be >= 1".into()));
        }
        if !(self.omega_factor > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("omega_factor and epsilon must be positive".into()));
        }
        self.fit.validate()
    }

    /// First day index every method can forecast.
    pub fn first_day(&self, method: Method) -> usize {
        if method.is_model() {
            self.fit_window.max(self.lookback)
        } else {
            self.lookback
        }
    }
}

/// Forecasts for a run of days, `days x buckets x assets`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub dates: Vec<NaiveDate>,
    pub bucket_starts: Vec<NaiveTime>,
    pub assets: Vec<String>,
    values: Vec<f64>,
    /// Days whose model fit failed and were filled with the SMA.
    pub fallback: Vec<bool>,
}

impl Forecast {
    pub fn new(
        dates: Vec<NaiveDate>,
        bucket_starts: Vec<NaiveTime>,
        assets: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != dates.len() * bucket_starts.len() * assets.len() {
            return Err(Error::Dimension("forecast values do not fill the grid".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Format(format!("forecasts must be finite and >= 0, got {v}")));
        }
        let fallback = vec![false; dates.len()];
        Ok(Self {
            dates,
            bucket_starts,
            assets,
            values,
            fallback,
        })
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn get(&self, d: usize, s: usize, a: usize) -> f64 {
        self.values[(d * self.bucket_starts.len() + s) * self.assets.len() + a]
    }

    /// Map forecast days onto panel day indices, checking buckets and assets agree.
    pub fn align(&self, panel: &VolumePanel) -> Result<Vec<usize>> {
        let starts: Vec<NaiveTime> = panel.buckets().iter().map(|b| b.start).collect();
        if starts != self.bucket_starts {
            return Err(Error::Dimension("forecast buckets differ from the panel".into()));
        }
        if panel.assets() != self.assets.as_slice() {
            return Err(Error::Dimension("forecast assets differ from the panel".into()));
        }
        self.dates
            .iter()
            .map(|d| {
                panel
                    .day_index(*d)
                    .ok_or_else(|| Error::Ingestion(format!("forecast day {d} is not in the panel")))
            })
            .collect()
    }

    /// The forecast with every value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let mut out = Self::new(
            self.dates.clone(),
            self.bucket_starts.clone(),
            self.assets.clone(),
            self.values.iter().map(|v| v * c).collect(),
        )?;
        out.fallback = self.fallback.clone();
        Ok(out)
    }

    /// Realized volumes of the given panel days, in forecast form.
    pub fn oracle(panel: &VolumePanel, days: std::ops::Range<usize>) -> Result<Self> {
        let mut values = Vec::new();
        for t in days.clone() {
            for s in 0..panel.n_buckets() {
                for a in 0..panel.n_assets() {
                    values.push(panel.volume(t, s, a));
                }
            }
        }
        Self::new(
            panel.days()[days].to_vec(),
            panel.buckets().iter().map(|b| b.start).collect(),
            panel.assets().to_vec(),
            values,
        )
    }

    /// `date,bucket_start,asset,forecast`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "bucket_start", "asset", "forecast"])?;
        for (d, date) in self.dates.iter().enumerate() {
            let date = date.format(DATE_FORMAT).to_string();
            for (s, start) in self.bucket_starts.iter().enumerate() {
                let start = start.format(TIME_FORMAT).to_string();
                for (a, asset) in self.assets.iter().enumerate() {
                    w.write_record([date.as_str(), start.as_str(), asset.as_str(), &self.get(d, s, a).to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if headers != ["date", "bucket_start", "asset", "forecast"] {
            return Err(Error::Format(format!(
                "forecast header must be date,bucket_start,asset,forecast, got {headers:?}"
            )));
        }
        let mut assets: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(NaiveDate, NaiveTime, usize), f64> = BTreeMap::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = line + 2;
            let date = NaiveDate::parse_from_str(rec[0].trim(), DATE_FORMAT)
                .map_err(|e| Error::Format(format!("row {row}: bad date: {e}")))?;
            let start =
                parse_time(rec[1].trim()).ok_or_else(|| Error::Format(format!("row {row}: bad bucket_start")))?;
            let name = rec[2].trim();
            let id = match assets.iter().position(|a| a == name) {
                Some(id) => id,
                None => {
                    assets.push(name.to_string());
                    assets.len() - 1
                }
            };
            let value: f64 = rec[3]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {row}: bad forecast {:?}", &rec[3])))?;
            if cells.insert((date, start, id), value).is_some() {
                return Err(Error::Format(format!("row {row}: duplicate forecast cell")));
            }
        }
        let dates: Vec<NaiveDate> = cells.keys().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let starts: Vec<NaiveTime> = cells.keys().map(|k| k.1).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        if cells.len() != dates.len() * starts.len() * assets.len() {
            return Err(Error::Ingestion("forecast file is not dense over date x bucket x asset".into()));
        }
        Self::new(dates, starts, assets, cells.into_values().collect())
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// One day of model forecasts: preprocess the trailing window, fit, predict, back-transform.
fn model_day(panel: &VolumePanel, t: usize, method: Method, params: &ForecastParams) -> Result<Vec<f64>> {
    let (series, state) = preprocess(panel, t - params.fit_window..t, params.epsilon)?;
    let (p, q) = (panel.n_buckets(), panel.n_assets());
    let mut fit = params.fit;
    fit.seed = params.fit.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let x_hat = match method {
        Method::DiagStar => {
            let result = diag::fit_diag(&series, &DiagWeights::application(p, q), &fit)?;
            result.model.predict(series.last())?
        }
        Method::BandedStar => {
            let k = params.k_max.min(p.min(q).saturating_sub(1));
            if k == 0 {
                return Err(Error::InvalidParameter("banded forecasts need p, q >= 2".into()));
            }
            let sel = banded::select_bandwidths(&series, k, params.omega_factor)?;
            let result = banded::fit_banded(&series, sel.ka_hat, sel.kb_hat, &fit)?;
            result.model.predict(series.last())?
        }
        Method::Sma | Method::AdjSma => unreachable!("baselines are not fitted"),
    };
    let v_hat = state.back_transform(&x_hat)?;
    if !v_hat.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("back-transformed forecast".into()));
    }
    let mut out = Vec::with_capacity(p * q);
    for s in 0..p {
        for a in 0..q {
            out.push(v_hat[(s, a)]);
        }
    }
    Ok(out)
}

fn baseline_day(panel: &VolumePanel, t: usize, method: Method, lookback: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(panel.n_buckets() * panel.n_assets());
    for s in 0..panel.n_buckets() {
        for a in 0..panel.n_assets() {
            out.push(match method {
                Method::AdjSma => adj_sma_forecast(panel, t, s, a, lookback)?.0,
                _ => sma_forecast(panel, t, s, a, lookback)?,
            });
        }
    }
    Ok(out)
}

/// Forecast every bucket of each day in `eval_days` (panel day indices).
///
/// Model methods refit on the trailing `fit_window` days for every evaluation day; a
/// failed fit falls back to the SMA for that day and is flagged.
pub fn rolling_forecast(
    panel: &VolumePanel,
    method: Method,
    eval_days: std::ops::Range<usize>,
    params: &ForecastParams,
) -> Result<Forecast> {
    params.validate()?;
    let first = params.first_day(method);
    if eval_days.start < first {
        return Err(Error::InsufficientHistory {
            needed: first,
            available: eval_days.start,
        });
    }
    if eval_days.start >= eval_days.end || eval_days.end > panel.n_days() {
        return Err(Error::InvalidParameter(format!(
            "evaluation days {eval_days:?} outside {first}..{}",
            panel.n_days()
        )));
    }
    let days: Vec<(Vec<f64>, bool)> = eval_days
        .clone()
        .into_par_iter()
        .map(|t| {
            if method.is_model() {
                match model_day(panel, t, method, params) {
                    Ok(v) => Ok((v, false)),
                    Err(_) => Ok((baseline_day(panel, t, Method::Sma, params.lookback)?, true)),
                }
            } else {
                Ok((baseline_day(panel, t, method, params.lookback)?, false))
            }
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(days.len() * panel.n_buckets() * panel.n_assets());
    let mut fallback = Vec::with_capacity(days.len());
    for (v, f) in days {
        values.extend(v);
        fallback.push(f);
    }
    let mut out = Forecast::new(
        panel.days()[eval_days].to_vec(),
        panel.buckets().iter().map(|b| b.start).collect(),
        panel.assets().to_vec(),
        values,
    )?;
    out.fallback = fallback;
    Ok(out)
}
