//! Intraday volume panels: days x buckets x assets.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveTime};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::MatrixTimeSeries;

pub const DATE_FORMAT: &str = "%Y-%m-%d";
pub const TIME_FORMAT: &str = "%H:%M";

/// Default floor applied before taking logs of volumes.
pub const DEFAULT_EPSILON: f64 = 1.0;

/// One intraday interval `[start, end)` in exchange-local time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bucket {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

/// Dense panel of intraday volumes (and optionally bucket VWAP prices).
///
/// Values are stored day-major, then bucket, then asset.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumePanel {
    days: Vec<NaiveDate>,
    buckets: Vec<Bucket>,
    assets: Vec<String>,
    volume: Vec<f64>,
    price: Option<Vec<f64>>,
}

impl VolumePanel {
    pub fn new(
        days: Vec<NaiveDate>,
        buckets: Vec<Bucket>,
        assets: Vec<String>,
        volume: Vec<f64>,
        price: Option<Vec<f64>>,
    ) -> Result<Self> {
        let size = days.len() * buckets.len() * assets.len();
        if days.is_empty() || buckets.is_empty() || assets.is_empty() {
            return Err(Error::Dimension("panel needs at least one day, bucket and asset".into()));
        }
        if volume.len() != size || price.as_ref().is_some_and(|p| p.len() != size) {
            return Err(Error::Dimension(format!(
                "panel arrays must hold {size} values for {}x{}x{}",
                days.len(),
                buckets.len(),
                assets.len()
            )));
        }
        if days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("days must be strictly increasing".into()));
        }
        for (k, b) in buckets.iter().enumerate() {
            if b.start >= b.end {
                return Err(Error::Format(format!("bucket {k} has start >= end")));
            }
        }
        if buckets.windows(2).any(|w| w[0].end > w[1].start) {
            return Err(Error::Format("buckets must be increasing and non-overlapping".into()));
        }
        if let Some(k) = volume.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Format(format!("volume must be finite and >= 0 (value {})", volume[k])));
        }
        if let Some(prices) = &price {
            if let Some(k) = prices.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Format(format!("price must be finite and > 0 (value {})", prices[k])));
            }
        }
        let unique: BTreeSet<&String> = assets.iter().collect();
        if unique.len() != assets.len() {
            return Err(Error::Format("duplicate asset identifiers".into()));
        }
        Ok(Self {
            days,
            buckets,
            assets,
            volume,
            price,
        })
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn n_buckets(&self) -> usize {
        self.buckets.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn has_prices(&self) -> bool {
        self.price.is_some()
    }

    fn index(&self, t: usize, s: usize, a: usize) -> usize {
        (t * self.buckets.len() + s) * self.assets.len() + a
    }

    pub fn volume(&self, t: usize, s: usize, a: usize) -> f64 {
        self.volume[self.index(t, s, a)]
    }

    pub fn price(&self, t: usize, s: usize, a: usize) -> Option<f64> {
        self.price.as_ref().map(|p| p[self.index(t, s, a)])
    }

    /// Volumes of day `t` as a `buckets x assets` matrix.
    pub fn day_matrix(&self, t: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_buckets(), self.n_assets(), |s, a| self.volume(t, s, a))
    }

    pub fn daily_total(&self, t: usize, a: usize) -> f64 {
        (0..self.n_buckets()).map(|s| self.volume(t, s, a)).sum()
    }

    /// First bucket starting at or after `time`.
    pub fn first_bucket_from(&self, time: NaiveTime) -> Option<usize> {
        self.buckets.iter().position(|b| b.start >= time)
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.days.binary_search(&date).ok()
    }

    /// Keep only the given day range.
    pub fn slice_days(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_days() {
            return Err(Error::InvalidParameter(format!(
                "day range {range:?} outside 0..{}",
                self.n_days()
            )));
        }
        let stride = self.n_buckets() * self.n_assets();
        let span = range.start * stride..range.end * stride;
        Self::new(
            self.days[range.clone()].to_vec(),
            self.buckets.clone(),
            self.assets.clone(),
            self.volume[span.clone()].to_vec(),
            self.price.as_ref().map(|p| p[span].to_vec()),
        )
    }

    /// Parse `date,bucket_start,asset,volume[,price]`.
    ///
    /// Rows may come in any order but must fill the grid spanned by the distinct
    /// dates, bucket starts and assets. Asset order is first appearance. A bucket
    /// ends where the next one starts; the last bucket gets the smallest spacing
    /// seen in the file (five minutes for a single-bucket panel).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let with_price = match headers.as_slice() {
            [d, b, a, v] if d == "date" && b == "bucket_start" && a == "asset" && v == "volume" => false,
            [d, b, a, v, p]
                if d == "date" && b == "bucket_start" && a == "asset" && v == "volume" && p == "price" =>
            {
                true
            }
            _ => {
                return Err(Error::Format(format!(
                    "panel header must be date,bucket_start,asset,volume[,price], got {headers:?}"
                )))
            }
        };

        let mut cells: BTreeMap<(NaiveDate, NaiveTime, usize), (f64, f64)> = BTreeMap::new();
        let mut assets: Vec<String> = Vec::new();
        let mut asset_ids: BTreeMap<String, usize> = BTreeMap::new();
        let mut last_date: Option<NaiveDate> = None;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = line + 2;
            let date = NaiveDate::parse_from_str(rec[0].trim(), DATE_FORMAT)
                .map_err(|e| Error::Format(format!("row {row}: bad date {:?}: {e}", &rec[0])))?;
            if last_date.is_some_and(|d| date < d) {
                return Err(Error::Format(format!("row {row}: dates are not monotone ({date})")));
            }
            last_date = Some(date);
            let start = parse_time(rec[1].trim())
                .ok_or_else(|| Error::Format(format!("row {row}: bad bucket_start {:?}", &rec[1])))?;
            let name = rec[2].trim().to_string();
            let next_id = assets.len();
            let id = *asset_ids.entry(name.clone()).or_insert_with(|| {
                assets.push(name);
                next_id
            });
            let parse = |k: usize, what: &str| -> Result<f64> {
                rec[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("row {row}: bad {what} {:?}", &rec[k])))
            };
            let volume = parse(3, "volume")?;
            let price = if with_price { parse(4, "price")? } else { f64::NAN };
            if cells.insert((date, start, id), (volume, price)).is_some() {
                return Err(Error::Format(format!(
                    "row {row}: duplicate cell ({date}, {}, {})",
                    start.format(TIME_FORMAT),
                    &rec[2]
                )));
            }
        }
        if cells.is_empty() {
            return Err(Error::Ingestion("panel file has no rows".into()));
        }

        let days: Vec<NaiveDate> = cells.keys().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect();
        let starts: Vec<NaiveTime> = cells.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();
        let (n, p, q) = (days.len(), starts.len(), assets.len());
        if cells.len() != n * p * q {
            let mut gaps = Vec::new();
            'outer: for d in &days {
                for s in &starts {
                    for (a, name) in assets.iter().enumerate() {
                        if !cells.contains_key(&(*d, *s, a)) {
                            gaps.push(format!("({d}, {}, {name})", s.format(TIME_FORMAT)));
                            if gaps.len() == 20 {
                                break 'outer;
                            }
                        }
                    }
                }
            }
            return Err(Error::Ingestion(format!(
                "{} of {} cells missing, first gaps: {}",
                n * p * q - cells.len(),
                n * p * q,
                gaps.join(" ")
            )));
        }

        let spacing = starts
            .windows(2)
            .map(|w| w[1] - w[0])
            .min()
            .unwrap_or_else(|| Duration::minutes(5));
        let buckets: Vec<Bucket> = starts
            .iter()
            .enumerate()
            .map(|(k, &start)| Bucket {
                start,
                end: starts.get(k + 1).copied().unwrap_or(start + spacing),
            })
            .collect();
        let volume = cells.values().map(|v| v.0).collect();
        let price = with_price.then(|| cells.values().map(|v| v.1).collect());
        Self::new(days, buckets, assets, volume, price)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.has_prices() {
            w.write_record(["date", "bucket_start", "asset", "volume", "price"])?;
        } else {
            w.write_record(["date", "bucket_start", "asset", "volume"])?;
        }
        for (t, day) in self.days.iter().enumerate() {
            let date = day.format(DATE_FORMAT).to_string();
            for (s, b) in self.buckets.iter().enumerate() {
                let start = b.start.format(TIME_FORMAT).to_string();
                for (a, name) in self.assets.iter().enumerate() {
                    let mut rec = vec![date.clone(), start.clone(), name.clone(), self.volume(t, s, a).to_string()];
                    if let Some(price) = self.price(t, s, a) {
                        rec.push(price.to_string());
                    }
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Accepts `HH:MM` and `HH:MM:SS`.
pub fn parse_time(s: &str) -> Option<NaiveTime> {
    NaiveTime::parse_from_str(s, "%H:%M:%S")
        .or_else(|_| NaiveTime::parse_from_str(s, TIME_FORMAT))
        .ok()
}

/// Per-cell log means over the fit window plus the zero-volume floor.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessState {
    pub log_means: DMatrix<f64>,
    pub epsilon: f64,
}

impl PreprocessState {
    /// `exp(x_hat + mean)`, cell by cell.
    pub fn back_transform(&self, x_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_hat.shape() != self.log_means.shape() {
            return Err(Error::Dimension(format!(
                "forecast is {:?}, state is {:?}",
                x_hat.shape(),
                self.log_means.shape()
            )));
        }
        Ok(x_hat.zip_map(&self.log_means, |x, m| (x + m).exp()))
    }

    pub fn transform(&self, volumes: &DMatrix<f64>) -> DMatrix<f64> {
        volumes.zip_map(&self.log_means, |v, m| v.max(self.epsilon).ln() - m)
    }
}

/// Log-demean the days in `window`: `X = log(max(V, eps)) - mean over the window`.
pub fn preprocess(
    panel: &VolumePanel,
    window: std::ops::Range<usize>,
    epsilon: f64,
) -> Result<(MatrixTimeSeries, PreprocessState)> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if window.start >= window.end || window.end > panel.n_days() {
        return Err(Error::InvalidParameter(format!(
            "window {window:?} outside 0..{}",
            panel.n_days()
        )));
    }
    let logs: Vec<DMatrix<f64>> = window
        .clone()
        .map(|t| panel.day_matrix(t).map(|v| v.max(epsilon).ln()))
        .collect();
    let mut means = DMatrix::zeros(panel.n_buckets(), panel.n_assets());
    for l in &logs {
        means += l;
    }
    means /= logs.len() as f64;
    let frames = logs.into_iter().map(|l| l - &means).collect();
    let state = PreprocessState {
        log_means: means,
        epsilon,
    };
    Ok((MatrixTimeSeries::new(frames)?, state))
}
