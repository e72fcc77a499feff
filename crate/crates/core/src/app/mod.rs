//! Intraday volume forecasting and execution backtests.

pub mod forecast;
pub mod panel;
pub mod pov;
pub mod report;
pub mod synth;

pub use forecast::{adj_sma_forecast, rolling_forecast, sma_forecast, Forecast, ForecastParams, Method};
pub use panel::{preprocess, Bucket, PreprocessState, VolumePanel};
pub use pov::{pov_backtest, PovBacktest, PovConfig, PovEpisode, PredictionClass};
pub use report::{default_sessions, relative_error_report, vwap_error, ErrorEntry, Session};
pub use synth::{synthetic_panel, SynthPanelConfig};
