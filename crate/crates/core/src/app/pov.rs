//! Percentage-of-volume execution replayed against realized volumes.

use std::io::Write;

use chrono::{NaiveDate, NaiveTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forecast::Forecast;
use super::panel::{parse_time, VolumePanel, TIME_FORMAT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PovConfig {
    pub alpha_targets: Vec<f64>,
    /// Order size as a fraction of the day's realized volume.
    pub order_frac: f64,
    /// Execution starts at the first bucket opening at or after this time (`HH:MM`).
    pub start_time: String,
}

impl Default for PovConfig {
    fn default() -> Self {
        Self {
            alpha_targets: vec![0.1, 0.2, 0.4, 0.6],
            order_frac: 0.05,
            start_time: "09:15".into(),
        }
    }
}

impl PovConfig {
    pub fn start(&self) -> Result<NaiveTime> {
        parse_time(&self.start_time).ok_or_else(|| Error::InvalidParameter(format!("bad start_time {:?}", self.start_time)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_targets.is_empty() || self.alpha_targets.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::InvalidParameter("alpha targets must lie in (0, 1]".into()));
        }
        if !(self.order_frac > 0.0 && self.order_frac.is_finite()) {
            return Err(Error::InvalidParameter("order_frac must be positive".into()));
        }
        self.start().map(|_| ())
    }
}

/// Outcome of sending `alpha * forecast` each bucket until `z` shares are filled.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub fills: Vec<f64>,
    pub completed: bool,
    /// Share of the last executed bucket that was needed (1 unless truncated).
    pub last_fraction: f64,
    /// Buckets to completion, counting the truncated bucket fractionally.
    pub duration: f64,
}

/// Replay the POV schedule. The final order is cut so that fills sum to `z` exactly.
pub fn execute(z: f64, alpha: f64, forecasts: &[f64]) -> Execution {
    let mut fills = Vec::new();
    let mut filled = 0.0;
    for &v_hat in forecasts {
        let q = alpha * v_hat;
        if filled + q >= z {
            let last = z - filled;
            let fraction = if q > 0.0 { last / q } else { 1.0 };
            fills.push(last);
            return Execution {
                duration: (fills.len() - 1) as f64 + fraction,
                fills,
                completed: true,
                last_fraction: fraction,
            };
        }
        fills.push(q);
        filled += q;
    }
    Execution {
        duration: fills.len() as f64,
        fills,
        completed: false,
        last_fraction: 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionClass {
    Over,
    Under,
}

/// One order on one day for one asset at one participation target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovEpisode {
    pub day: NaiveDate,
    pub asset: String,
    pub order_size: f64,
    pub alpha_target: f64,
    pub start_bucket: usize,
    pub fills: Vec<f64>,
    /// Realized volumes of the executed buckets.
    pub volumes: Vec<f64>,
    pub forecasts: Vec<f64>,
    pub completed: bool,
    pub last_fraction: f64,
    pub alpha_actual: f64,
    pub impact_pct: f64,
    pub t_actual: f64,
    /// `None` when even perfect foresight cannot fill the order within the day.
    pub t_ideal: Option<f64>,
    /// Present only when both the actual and the ideal execution complete.
    pub timing_pct: Option<f64>,
    pub class: PredictionClass,
}

/// Run one episode. Realized volume of a truncated final bucket enters `alpha_actual`
/// and the class comparison with the same fraction as the order.
pub fn episode(
    day: NaiveDate,
    asset: &str,
    z: f64,
    alpha: f64,
    start_bucket: usize,
    forecasts: &[f64],
    volumes: &[f64],
) -> PovEpisode {
    let exec = execute(z, alpha, forecasts);
    let used = exec.fills.len();
    let weight = |k: usize| if k + 1 == used { exec.last_fraction } else { 1.0 };
    let traded: f64 = exec.fills.iter().sum();
    let (mut market, mut predicted) = (0.0, 0.0);
    for k in 0..used {
        market += weight(k) * volumes[k];
        predicted += weight(k) * forecasts[k];
    }
    let alpha_actual = if market > 0.0 { traded / market } else { f64::NAN };
    let ideal = execute(z, alpha, volumes);
    let t_ideal = ideal.completed.then_some(ideal.duration);
    let timing_pct = match t_ideal {
        Some(t) if exec.completed && t > 0.0 => Some((exec.duration - t) / t * 100.0),
        _ => None,
    };
    PovEpisode {
        day,
        asset: asset.into(),
        order_size: z,
        alpha_target: alpha,
        start_bucket,
        volumes: volumes[..used].to_vec(),
        forecasts: forecasts[..used].to_vec(),
        completed: exec.completed,
        last_fraction: exec.last_fraction,
        alpha_actual,
        impact_pct: (alpha_actual - alpha) / alpha * 100.0,
        t_actual: exec.duration,
        t_ideal,
        timing_pct,
        class: if predicted > market {
            PredictionClass::Over
        } else {
            PredictionClass::Under
        },
        fills: exec.fills,
    }
}

/// Means per asset, target and prediction class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovSummary {
    pub asset: String,
    pub alpha_target: f64,
    pub class: PredictionClass,
    pub episodes: usize,
    pub mean_impact_pct: f64,
    pub timing_episodes: usize,
    pub mean_timing_pct: f64,
    pub incomplete: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovBacktest {
    pub episodes: Vec<PovEpisode>,
    pub summary: Vec<PovSummary>,
    /// (day, asset) pairs without volume, hence without an order.
    pub skipped: usize,
}

/// Backtest every forecast day and asset at each configured target.
pub fn pov_backtest(forecast: &Forecast, panel: &VolumePanel, config: &PovConfig) -> Result<PovBacktest> {
    config.validate()?;
    let days = forecast.align(panel)?;
    let start = panel
        .first_bucket_from(config.start()?)
        .ok_or_else(|| Error::InvalidParameter(format!("no bucket starts at or after {}", config.start_time)))?;
    let q = panel.n_assets();
    let per_day: Vec<(Vec<PovEpisode>, usize)> = days
        .par_iter()
        .enumerate()
        .map(|(d, &t)| {
            let mut episodes = Vec::new();
            let mut skipped = 0;
            for a in 0..q {
                let z = config.order_frac * panel.daily_total(t, a);
                if !(z > 0.0) {
                    skipped += 1;
                    continue;
                }
                let forecasts: Vec<f64> = (start..panel.n_buckets()).map(|s| forecast.get(d, s, a)).collect();
                let volumes: Vec<f64> = (start..panel.n_buckets()).map(|s| panel.volume(t, s, a)).collect();
                for &alpha in &config.alpha_targets {
                    episodes.push(episode(panel.days()[t], &panel.assets()[a], z, alpha, start, &forecasts, &volumes));
                }
            }
            (episodes, skipped)
        })
        .collect();
    let skipped = per_day.iter().map(|x| x.1).sum();
    let episodes: Vec<PovEpisode> = per_day.into_iter().flat_map(|x| x.0).collect();
    let summary = summarize(&episodes, panel.assets(), &config.alpha_targets);
    Ok(PovBacktest {
        episodes,
        summary,
        skipped,
    })
}

fn summarize(episodes: &[PovEpisode], assets: &[String], alphas: &[f64]) -> Vec<PovSummary> {
    let mut out = Vec::new();
    for asset in assets {
        for class in [PredictionClass::Over, PredictionClass::Under] {
            for &alpha in alphas {
                let group: Vec<&PovEpisode> = episodes
                    .iter()
                    .filter(|e| &e.asset == asset && e.class == class && e.alpha_target == alpha)
                    .collect();
                let impacts: Vec<f64> = group.iter().map(|e| e.impact_pct).filter(|x| x.is_finite()).collect();
                let timings: Vec<f64> = group.iter().filter_map(|e| e.timing_pct).collect();
                out.push(PovSummary {
                    asset: asset.clone(),
                    alpha_target: alpha,
                    class,
                    episodes: group.len(),
                    mean_impact_pct: mean(&impacts),
                    timing_episodes: timings.len(),
                    mean_timing_pct: mean(&timings),
                    incomplete: group.iter().filter(|e| !e.completed).count(),
                });
            }
        }
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn class_name(c: PredictionClass) -> &'static str {
    match c {
        PredictionClass::Over => "over",
        PredictionClass::Under => "under",
    }
}

impl PovBacktest {
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "asset",
            "alpha_target",
            "class",
            "episodes",
            "mean_impact_pct",
            "timing_episodes",
            "mean_timing_pct",
            "incomplete",
        ])?;
        for s in &self.summary {
            w.write_record([
                s.asset.clone(),
                s.alpha_target.to_string(),
                class_name(s.class).to_string(),
                s.episodes.to_string(),
                s.mean_impact_pct.to_string(),
                s.timing_episodes.to_string(),
                s.mean_timing_pct.to_string(),
                s.incomplete.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_episodes_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "day",
            "asset",
            "alpha_target",
            "start_bucket",
            "order_size",
            "buckets",
            "completed",
            "alpha_actual",
            "impact_pct",
            "t_actual",
            "t_ideal",
            "timing_pct",
            "class",
        ])?;
        for e in &self.episodes {
            w.write_record([
                e.day.to_string(),
                e.asset.clone(),
                e.alpha_target.to_string(),
                e.start_bucket.to_string(),
                e.order_size.to_string(),
                e.fills.len().to_string(),
                e.completed.to_string(),
                e.alpha_actual.to_string(),
                e.impact_pct.to_string(),
                e.t_actual.to_string(),
                e.t_ideal.map_or(String::new(), |t| t.to_string()),
                e.timing_pct.map_or(String::new(), |t| t.to_string()),
                class_name(e.class).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Wide layout: one row per asset, `over_<alpha>` then `under_<alpha>` columns.
    pub fn write_wide_csv<W: Write>(&self, method: &str, timing: bool, writer: W) -> Result<()> {
        let mut assets: Vec<&str> = Vec::new();
        let mut alphas: Vec<f64> = Vec::new();
        for s in &self.summary {
            if !assets.contains(&s.asset.as_str()) {
                assets.push(&s.asset);
            }
            if !alphas.contains(&s.alpha_target) {
                alphas.push(s.alpha_target);
            }
        }
        let classes = [PredictionClass::Over, PredictionClass::Under];
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["asset".to_string(), "method".to_string()];
        for c in classes {
            for a in &alphas {
                header.push(format!("{}_{a}", class_name(c)));
            }
        }
        w.write_record(&header)?;
        for asset in assets {
            let mut row = vec![asset.to_string(), method.to_string()];
            for c in classes {
                for &a in &alphas {
                    let v = self
                        .summary
                        .iter()
                        .find(|s| s.asset == asset && s.class == c && s.alpha_target == a)
                        .map_or(f64::NAN, |s| if timing { s.mean_timing_pct } else { s.mean_impact_pct });
                    row.push(v.to_string());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Clock label of the first executed bucket, for reports.
pub fn start_label(panel: &VolumePanel, start_bucket: usize) -> String {
    panel.buckets()[start_bucket].start.format(TIME_FORMAT).to_string()
}
