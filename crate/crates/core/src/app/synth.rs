//! Synthetic volume panels driven by a known banded model.

use chrono::{Datelike, Duration, NaiveDate, NaiveTime, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::panel::{Bucket, VolumePanel, DATE_FORMAT};
use crate::banded::BandedStarModel;
use crate::error::{Error, Result};
use crate::simulate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthPanelConfig {
    pub days: usize,
    /// Must divide the 150-minute morning and afternoon sessions.
    pub bucket_minutes: u32,
    pub assets: usize,
    #[serde(rename = "kA")]
    pub ka: usize,
    #[serde(rename = "kB")]
    pub kb: usize,
    /// Standard deviation multiplier of the log-volume fluctuations.
    pub scale: f64,
    pub start_date: String,
    pub with_prices: bool,
    pub seed: u64,
}

impl Default for SynthPanelConfig {
    fn default() -> Self {
        Self {
            days: 120,
            bucket_minutes: 30,
            assets: 5,
            ka: 2,
            kb: 1,
            scale: 0.3,
            start_date: "2023-06-01".into(),
            with_prices: true,
            seed: 0,
        }
    }
}

/// Buckets covering 09:00-11:30 and 12:30-15:00.
pub fn session_buckets(minutes: u32) -> Result<Vec<Bucket>> {
    if minutes == 0 || 150 % minutes != 0 {
        return Err(Error::InvalidParameter(format!(
            "bucket_minutes must divide 150, got {minutes}"
        )));
    }
    let mut out = Vec::new();
    for open in [NaiveTime::from_hms_opt(9, 0, 0), NaiveTime::from_hms_opt(12, 30, 0)] {
        let open = open.expect("valid clock time");
        for k in 0..150 / minutes {
            let start = open + Duration::minutes(i64::from(k * minutes));
            out.push(Bucket {
                start,
                end: start + Duration::minutes(i64::from(minutes)),
            });
        }
    }
    Ok(out)
}

fn weekdays(from: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = from;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Volumes `exp(level + scale * X_t)` with `X_t` simulated from a random banded model.
///
/// The log level combines an asset size with a U-shaped intraday profile. Prices follow
/// independent log random walks per asset. Returns the panel and the generating model.
pub fn synthetic_panel(config: &SynthPanelConfig) -> Result<(VolumePanel, BandedStarModel)> {
    if config.days < 2 || config.assets == 0 || !(config.scale > 0.0) {
        return Err(Error::InvalidParameter("synthetic panel needs days >= 2, assets >= 1, scale > 0".into()));
    }
    let start = NaiveDate::parse_from_str(&config.start_date, DATE_FORMAT)
        .map_err(|e| Error::InvalidParameter(format!("bad start_date: {e}")))?;
    let buckets = session_buckets(config.bucket_minutes)?;
    let (p, q) = (buckets.len(), config.assets);
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let model_seed = rand::Rng::random::<u64>(&mut seeds);
    let series_seed = rand::Rng::random::<u64>(&mut seeds);
    let price_seed = rand::Rng::random::<u64>(&mut seeds);

    let model = simulate::gen_model_banded(p, q, config.ka, config.kb, model_seed)?;
    let series = simulate::simulate_series(&model, config.days, simulate::DEFAULT_BURN_IN, series_seed)?;

    let centre = (p as f64 - 1.0) / 2.0;
    let level = |s: usize, a: usize| {
        let u = if centre > 0.0 { (s as f64 - centre) / centre } else { 0.0 };
        10.0 + 0.4 * a as f64 + 0.8 * u * u
    };
    let mut volume = Vec::with_capacity(config.days * p * q);
    for t in 0..config.days {
        for s in 0..p {
            for a in 0..q {
                volume.push((level(s, a) + config.scale * series.frame(t)[(s, a)]).exp());
            }
        }
    }

    let price = config.with_prices.then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(price_seed);
        let mut log_price: Vec<f64> = (0..q).map(|a| (1000.0 * (a + 1) as f64).ln()).collect();
        let mut out = Vec::with_capacity(volume.len());
        for _ in 0..config.days * p {
            for lp in log_price.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *lp += 0.002 * z;
                out.push(lp.exp());
            }
        }
        out
    });

    let assets = (0..q).map(|a| format!("S{:02}", a + 1)).collect();
    let panel = VolumePanel::new(weekdays(start, config.days), buckets, assets, volume, price)?;
    Ok((panel, model))
}
