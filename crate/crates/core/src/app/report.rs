//! Forecast accuracy by asset and trading session.

use std::io::Write;

use chrono::NaiveTime;
use serde::{Deserialize, Serialize};

use super::forecast::Forecast;
use super::panel::{parse_time, Bucket, VolumePanel, TIME_FORMAT};
use crate::error::{Error, Result};

/// A clock-defined subset of buckets: those starting in `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub name: String,
    #[serde(with = "clock")]
    pub start: NaiveTime,
    #[serde(with = "clock")]
    pub end: NaiveTime,
}

mod clock {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveTime, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&t.format(TIME_FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<NaiveTime, D::Error> {
        let s = String::deserialize(d)?;
        parse_time(&s).ok_or_else(|| serde::de::Error::custom(format!("bad clock time {s:?}")))
    }
}

impl Session {
    pub fn new(name: &str, start: &str, end: &str) -> Result<Self> {
        let parse = |s: &str| parse_time(s).ok_or_else(|| Error::Format(format!("bad clock time {s:?}")));
        let (start, end) = (parse(start)?, parse(end)?);
        if start >= end {
            return Err(Error::InvalidParameter(format!("session {name} has start >= end")));
        }
        Ok(Self {
            name: name.into(),
            start,
            end,
        })
    }

    pub fn contains(&self, bucket: &Bucket) -> bool {
        self.start <= bucket.start && bucket.start < self.end
    }

    pub fn bucket_indices(&self, panel: &VolumePanel) -> Vec<usize> {
        (0..panel.n_buckets()).filter(|&s| self.contains(&panel.buckets()[s])).collect()
    }
}

/// Full day, morning, afternoon and the five hourly partitions of the Tokyo session.
pub fn default_sessions() -> Vec<Session> {
    [
        ("full_day", "09:00", "15:00"),
        ("morning", "09:00", "11:30"),
        ("afternoon", "12:30", "15:00"),
        ("p1", "09:00", "10:00"),
        ("p2", "10:00", "11:00"),
        ("p3", "11:00", "13:00"),
        ("p4", "13:00", "14:00"),
        ("p5", "14:00", "15:00"),
    ]
    .iter()
    .map(|(n, s, e)| Session::new(n, s, e).expect("static sessions are valid"))
    .collect()
}

/// One asset x session entry of an accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub asset: String,
    pub session: String,
    /// Mean over days of the within-day mean; NaN when no day contributes.
    pub value: f64,
    pub days: usize,
    /// Cells (or days, for VWAP) skipped because the denominator was zero.
    pub excluded: usize,
}

/// Mean absolute relative error `|V_hat - V| / V` per asset and session.
///
/// Each day contributes the mean over its session buckets with positive actual volume;
/// the table entry averages those day means.
pub fn relative_error_report(forecast: &Forecast, panel: &VolumePanel, sessions: &[Session]) -> Result<Vec<ErrorEntry>> {
    let days = forecast.align(panel)?;
    let mut out = Vec::new();
    for (a, asset) in panel.assets().iter().enumerate() {
        for session in sessions {
            let buckets = session.bucket_indices(panel);
            if buckets.is_empty() {
                continue;
            }
            let (mut total, mut used, mut excluded) = (0.0, 0usize, 0usize);
            for (d, &t) in days.iter().enumerate() {
                let (mut sum, mut cells) = (0.0, 0usize);
                for &s in &buckets {
                    let v = panel.volume(t, s, a);
                    if v > 0.0 {
                        sum += (forecast.get(d, s, a) - v).abs() / v;
                        cells += 1;
                    } else {
                        excluded += 1;
                    }
                }
                if cells > 0 {
                    total += sum / cells as f64;
                    used += 1;
                }
            }
            out.push(ErrorEntry {
                asset: asset.clone(),
                session: session.name.clone(),
                value: if used > 0 { total / used as f64 } else { f64::NAN },
                days: used,
                excluded,
            });
        }
    }
    Ok(out)
}

/// VWAP discrepancy in basis points per asset and session, averaged over days.
///
/// Days where either the forecast or the actual volumes sum to zero over the session
/// are excluded and counted.
pub fn vwap_error(forecast: &Forecast, panel: &VolumePanel, sessions: &[Session]) -> Result<Vec<ErrorEntry>> {
    if !panel.has_prices() {
        return Err(Error::MissingPrices);
    }
    let days = forecast.align(panel)?;
    let mut out = Vec::new();
    for (a, asset) in panel.assets().iter().enumerate() {
        for session in sessions {
            let buckets = session.bucket_indices(panel);
            if buckets.is_empty() {
                continue;
            }
            let (mut total, mut used, mut excluded) = (0.0, 0usize, 0usize);
            for (d, &t) in days.iter().enumerate() {
                let (mut pv, mut v, mut pf, mut f) = (0.0, 0.0, 0.0, 0.0);
                for &s in &buckets {
                    let price = panel.price(t, s, a).expect("prices checked");
                    let vol = panel.volume(t, s, a);
                    let fc = forecast.get(d, s, a);
                    pv += price * vol;
                    v += vol;
                    pf += price * fc;
                    f += fc;
                }
                if v > 0.0 && f > 0.0 {
                    let actual = pv / v;
                    total += ((pf / f - actual) / actual).abs() * 1e4;
                    used += 1;
                } else {
                    excluded += 1;
                }
            }
            out.push(ErrorEntry {
                asset: asset.clone(),
                session: session.name.clone(),
                value: if used > 0 { total / used as f64 } else { f64::NAN },
                days: used,
                excluded,
            });
        }
    }
    Ok(out)
}

/// Wide table: one row per asset, one column per session, tagged with the method.
pub fn write_session_table<W: Write>(entries: &[ErrorEntry], method: &str, writer: W) -> Result<()> {
    let mut sessions: Vec<&str> = Vec::new();
    let mut assets: Vec<&str> = Vec::new();
    for e in entries {
        if !sessions.contains(&e.session.as_str()) {
            sessions.push(&e.session);
        }
        if !assets.contains(&e.asset.as_str()) {
            assets.push(&e.asset);
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["asset", "method"];
    header.extend(&sessions);
    w.write_record(&header)?;
    for asset in assets {
        let mut row = vec![asset.to_string(), method.to_string()];
        for session in &sessions {
            let value = entries
                .iter()
                .find(|e| e.asset == asset && e.session == *session)
                .map_or(String::new(), |e| e.value.to_string());
            row.push(value);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn fixture(volumes: Vec<f64>, prices: Option<Vec<f64>>) -> VolumePanel {
        let t = |h, m| NaiveTime::from_hms_opt(h, m, 0).unwrap();
        VolumePanel::new(
            vec![
                NaiveDate::from_ymd_opt(2024, 1, 4).unwrap(),
                NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(),
            ],
            vec![
                Bucket { start: t(9, 0), end: t(9, 5) },
                Bucket { start: t(13, 0), end: t(13, 5) },
            ],
            vec!["X".into()],
            volumes,
            prices,
        )
        .unwrap()
    }

    fn forecast_of(panel: &VolumePanel, values: Vec<f64>) -> Forecast {
        Forecast::new(
            panel.days().to_vec(),
            panel.buckets().iter().map(|b| b.start).collect(),
            panel.assets().to_vec(),
            values,
        )
        .unwrap()
    }

    fn entry<'a>(entries: &'a [ErrorEntry], session: &str) -> &'a ErrorEntry {
        entries.iter().find(|e| e.session == session).unwrap()
    }

    #[test]
    fn hand_relative_errors() {
        let panel = fixture(vec![10.0, 20.0, 40.0, 50.0], None);
        let f = forecast_of(&panel, vec![12.0, 10.0, 40.0, 100.0]);
        let r = relative_error_report(&f, &panel, &default_sessions()).unwrap();
        // Day 1: 0.2 and 0.5; day 2: 0 and 1.
        assert!((entry(&r, "full_day").value - (0.35 + 0.5) / 2.0).abs() < 1e-12);
        assert!((entry(&r, "morning").value - 0.1).abs() < 1e-12);
        assert!((entry(&r, "p4").value - 0.75).abs() < 1e-12);
        assert!(r.iter().all(|e| e.session != "p2"), "sessions without buckets are skipped");
    }

    #[test]
    fn zero_actual_cells_are_excluded() {
        let panel = fixture(vec![0.0, 20.0, 40.0, 50.0], None);
        let f = forecast_of(&panel, vec![12.0, 20.0, 40.0, 50.0]);
        let r = relative_error_report(&f, &panel, &default_sessions()).unwrap();
        let full = entry(&r, "full_day");
        assert_eq!((full.value, full.excluded), (0.0, 1));
    }

    #[test]
    fn hand_vwap_error() {
        let panel = fixture(vec![10.0, 30.0, 10.0, 30.0], Some(vec![100.0, 102.0, 100.0, 102.0]));
        let f = forecast_of(&panel, vec![30.0, 10.0, 30.0, 10.0]);
        let r = vwap_error(&f, &panel, &default_sessions()).unwrap();
        let expected = (100.5f64 - 101.5).abs() / 101.5 * 1e4;
        assert!((entry(&r, "full_day").value - expected).abs() < 1e-9);
        assert_eq!(entry(&r, "morning").value, 0.0);
    }

    #[test]
    fn vwap_needs_prices() {
        let panel = fixture(vec![1.0; 4], None);
        let f = forecast_of(&panel, vec![1.0; 4]);
        assert!(matches!(vwap_error(&f, &panel, &default_sessions()), Err(Error::MissingPrices)));
    }

    #[test]
    fn session_json_uses_clock_strings() {
        let s = Session::new("p1", "09:00", "10:00").unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"name":"p1","start":"09:00","end":"10:00"}"#);
        assert_eq!(serde_json::from_str::<Session>(&json).unwrap(), s);
    }
}
