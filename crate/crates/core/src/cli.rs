//! Command-line front end.
//!
//! Every subcommand resolves a [`RunConfig`] (JSON file, then flag overrides), writes
//! it to `<out>/config.json`, writes its artifacts next to it and lists them in
//! `<out>/manifest.json`. Exit codes: 0 success, 1 invalid input or configuration,
//! 2 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::app::{
    self, default_sessions, Forecast, ForecastParams, Method, PovConfig, Session, SynthPanelConfig, VolumePanel,
};
use crate::banded;
use crate::diag::{self, DiagWeights};
use crate::error::{Error, Result};
use crate::model::{self, FitConfig};
use crate::simulate::{self, SimDesign, SimKind};
use crate::tensor::MatrixTimeSeries;

pub const THREADS_ENV: &str = "MSTAR_THREADS";

/// Fully resolved settings of one run. Sections a subcommand does not use are kept
/// at their values so the file can be replayed with any subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: String,
    pub seed: u64,
    pub input: Option<PathBuf>,
    /// Forecast CSV consumed by `backtest-pov` and `report`.
    pub forecast_input: Option<PathBuf>,
    pub simulation: SimDesign,
    pub fit: FitConfig,
    /// `simulation`, `application`, or a directory holding W0/W1/V0/V1 CSV files.
    pub weights: String,
    #[serde(rename = "kA")]
    pub ka: Option<usize>,
    #[serde(rename = "kB")]
    pub kb: Option<usize>,
    #[serde(rename = "K")]
    pub k_max: usize,
    pub omega_factor: f64,
    pub method: Method,
    pub forecast: ForecastParams,
    /// Number of trailing panel days to forecast; all forecastable days when absent.
    pub eval_days: Option<usize>,
    pub sessions: Vec<Session>,
    pub pov: PovConfig,
    pub synth: SynthPanelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: String::new(),
            seed: 0,
            input: None,
            forecast_input: None,
            simulation: SimDesign::diag(10, 10, vec![2000], 50, 0),
            fit: FitConfig::default(),
            weights: "simulation".into(),
            ka: None,
            kb: None,
            k_max: 4,
            omega_factor: 0.1,
            method: Method::BandedStar,
            forecast: ForecastParams::default(),
            eval_days: None,
            sessions: default_sessions(),
            pov: PovConfig::default(),
            synth: SynthPanelConfig::default(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mstar", version, about = "Matrix spatio-temporal autoregressions and volume forecasting")]
struct Cli {
    /// Worker threads (falls back to MSTAR_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for all outputs.
    #[arg(long, default_value = "mstar-run")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FitFlags {
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Debug, Args)]
struct ForecastFlags {
    /// sma, adj_sma, diag_star or banded_star.
    #[arg(long)]
    method: Option<String>,
    /// SMA lookback L in days.
    #[arg(long)]
    lookback: Option<usize>,
    #[arg(long)]
    fit_window: Option<usize>,
    #[arg(long = "K")]
    k_max: Option<usize>,
    #[arg(long)]
    omega_factor: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Forecast this many trailing days.
    #[arg(long)]
    eval_days: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte-Carlo study of estimation error.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        /// Sample sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long = "kA")]
        ka: Option<usize>,
        #[arg(long = "kB")]
        kb: Option<usize>,
        /// Select bandwidths with this search bound instead of using the true ones.
        #[arg(long = "K")]
        k_max: Option<usize>,
        #[arg(long)]
        omega_factor: Option<f64>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[command(flatten)]
        fit: FitFlags,
    },
    /// Fit the diagonal-coefficient model to a `t,i,j,value` series.
    FitDiag {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        weights: Option<String>,
        #[command(flatten)]
        fit: FitFlags,
    },
    /// Fit the banded model with given bandwidths.
    FitBanded {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long = "kA")]
        ka: Option<usize>,
        #[arg(long = "kB")]
        kb: Option<usize>,
        #[command(flatten)]
        fit: FitFlags,
    },
    /// Select banded-model bandwidths.
    SelectBandwidth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long = "K")]
        k_max: Option<usize>,
        #[arg(long)]
        omega_factor: Option<f64>,
    },
    /// Rolling next-day volume forecasts with accuracy tables.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        forecast: ForecastFlags,
        #[command(flatten)]
        fit: FitFlags,
    },
    /// POV execution backtest from a forecast file or a forecasting method.
    BacktestPov {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Forecast CSV; when absent the forecast is computed with --method.
        #[arg(long)]
        forecast: Option<PathBuf>,
        #[command(flatten)]
        forecast_flags: ForecastFlags,
        #[command(flatten)]
        fit: FitFlags,
        /// Target participation rates, comma separated.
        #[arg(long, value_delimiter = ',')]
        alpha: Option<Vec<f64>>,
        #[arg(long)]
        order_frac: Option<f64>,
        #[arg(long)]
        start_time: Option<String>,
    },
    /// Accuracy and VWAP tables for an existing forecast file.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        forecast: Option<PathBuf>,
    },
    /// Write a synthetic volume panel generated from a random banded model.
    SynthPanel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        bucket_minutes: Option<u32>,
        #[arg(long)]
        assets: Option<usize>,
        #[arg(long = "kA")]
        ka: Option<usize>,
        #[arg(long = "kB")]
        kb: Option<usize>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        start_date: Option<String>,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl FitFlags {
    fn apply(self, fit: &mut FitConfig) {
        set(&mut fit.tolerance, self.tolerance);
        set(&mut fit.max_iterations, self.max_iter);
    }
}

impl ForecastFlags {
    fn apply(self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(m) = self.method {
            cfg.method = Method::parse(&m)?;
        }
        set(&mut cfg.forecast.lookback, self.lookback);
        set(&mut cfg.forecast.fit_window, self.fit_window);
        set(&mut cfg.forecast.k_max, self.k_max);
        set(&mut cfg.forecast.omega_factor, self.omega_factor);
        set(&mut cfg.forecast.epsilon, self.epsilon);
        if self.eval_days.is_some() {
            cfg.eval_days = self.eval_days;
        }
        Ok(())
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(RunConfig::default()),
    }
}

/// Apply the command's flags to the base configuration and return the run directory.
fn resolve(command: Command) -> Result<(RunConfig, PathBuf)> {
    let (name, common) = match &command {
        Command::Simulate { common, .. } => ("simulate", common),
        Command::FitDiag { common, .. } => ("fit-diag", common),
        Command::FitBanded { common, .. } => ("fit-banded", common),
        Command::SelectBandwidth { common, .. } => ("select-bandwidth", common),
        Command::Forecast { common, .. } => ("forecast", common),
        Command::BacktestPov { common, .. } => ("backtest-pov", common),
        Command::Report { common, .. } => ("report", common),
        Command::SynthPanel { common, .. } => ("synth-panel", common),
    };
    let mut cfg = load_config(common.config.as_deref())?;
    cfg.subcommand = name.into();
    set(&mut cfg.seed, common.seed);
    let out = common.out.clone();
    match command {
        Command::Simulate {
            kind,
            p,
            q,
            n,
            reps,
            ka,
            kb,
            k_max,
            omega_factor,
            burn_in,
            fit,
            ..
        } => {
            let sim = &mut cfg.simulation;
            if let Some(k) = kind {
                sim.kind = match k.as_str() {
                    "diag" => SimKind::Diag,
                    "banded" => SimKind::Banded,
                    other => return Err(Error::InvalidParameter(format!("unknown kind {other:?}"))),
                };
            }
            set(&mut sim.p, p);
            set(&mut sim.q, q);
            set(&mut sim.n, n);
            set(&mut sim.replications, reps);
            set(&mut sim.ka, ka);
            set(&mut sim.kb, kb);
            if k_max.is_some() {
                sim.k_max = k_max;
            }
            set(&mut sim.omega_factor, omega_factor);
            set(&mut sim.burn_in, burn_in);
            fit.apply(&mut sim.fit);
            sim.seed = cfg.seed;
        }
        Command::FitDiag { input, weights, fit, .. } => {
            set(&mut cfg.input, input.map(Some));
            set(&mut cfg.weights, weights);
            fit.apply(&mut cfg.fit);
        }
        Command::FitBanded { input, ka, kb, fit, .. } => {
            set(&mut cfg.input, input.map(Some));
            set(&mut cfg.ka, ka.map(Some));
            set(&mut cfg.kb, kb.map(Some));
            fit.apply(&mut cfg.fit);
        }
        Command::SelectBandwidth {
            input, k_max, omega_factor, ..
        } => {
            set(&mut cfg.input, input.map(Some));
            set(&mut cfg.k_max, k_max);
            set(&mut cfg.omega_factor, omega_factor);
        }
        Command::Forecast {
            input, forecast, fit, ..
        } => {
            set(&mut cfg.input, input.map(Some));
            forecast.apply(&mut cfg)?;
            fit.apply(&mut cfg.forecast.fit);
        }
        Command::BacktestPov {
            input,
            forecast,
            forecast_flags,
            fit,
            alpha,
            order_frac,
            start_time,
            ..
        } => {
            set(&mut cfg.input, input.map(Some));
            set(&mut cfg.forecast_input, forecast.map(Some));
            forecast_flags.apply(&mut cfg)?;
            fit.apply(&mut cfg.forecast.fit);
            set(&mut cfg.pov.alpha_targets, alpha);
            set(&mut cfg.pov.order_frac, order_frac);
            set(&mut cfg.pov.start_time, start_time);
        }
        Command::Report { input, forecast, .. } => {
            set(&mut cfg.input, input.map(Some));
            set(&mut cfg.forecast_input, forecast.map(Some));
        }
        Command::SynthPanel {
            days,
            bucket_minutes,
            assets,
            ka,
            kb,
            scale,
            start_date,
            ..
        } => {
            let s = &mut cfg.synth;
            set(&mut s.days, days);
            set(&mut s.bucket_minutes, bucket_minutes);
            set(&mut s.assets, assets);
            set(&mut s.ka, ka);
            set(&mut s.kb, kb);
            set(&mut s.scale, scale);
            set(&mut s.start_date, start_date);
            s.seed = cfg.seed;
        }
    }
    cfg.fit.seed = cfg.seed;
    cfg.forecast.fit.seed = cfg.seed;
    Ok((cfg, out))
}

/// Files written so far in the run directory.
struct RunDir {
    root: PathBuf,
    files: Vec<(String, u64)>,
}

impl RunDir {
    fn create(root: PathBuf) -> Result<Self> {
        fs::create_dir_all(&root)?;
        Ok(Self { root, files: Vec::new() })
    }

    fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
    {
        let path = self.root.join(name);
        {
            let mut w = BufWriter::new(fs::File::create(&path)?);
            f(&mut w)?;
            std::io::Write::flush(&mut w)?;
        }
        self.files.push((name.into(), fs::metadata(&path)?.len()));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            std::io::Write::write_all(w, b"\n")?;
            Ok(())
        })
    }

    fn finish(mut self, subcommand: &str) -> Result<()> {
        #[derive(Serialize)]
        struct Entry<'a> {
            name: &'a str,
            bytes: u64,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            tool: &'static str,
            version: &'static str,
            subcommand: &'a str,
            files: Vec<Entry<'a>>,
        }
        let files = std::mem::take(&mut self.files);
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            files: files.iter().map(|(n, b)| Entry { name: n, bytes: *b }).collect(),
        };
        self.json("manifest.json", &manifest)
    }
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::InvalidParameter(format!("missing --{what}")))
}

fn load_weights(spec: &str, p: usize, q: usize) -> Result<DiagWeights> {
    match spec {
        "simulation" => Ok(DiagWeights::simulation_design(p, q)),
        "application" => Ok(DiagWeights::application(p, q)),
        dir => {
            let dir = Path::new(dir);
            if !dir.is_dir() {
                return Err(Error::InvalidParameter(format!(
                    "weights must be simulation, application or a directory, got {spec:?}"
                )));
            }
            let read = |name: &str| diag::read_weight_csv_path(dir.join(format!("{name}.csv")));
            let w = DiagWeights::new(read("W0")?, read("W1")?, read("V0")?, read("V1")?)?;
            if w.p() != p || w.q() != q {
                return Err(Error::Dimension(format!(
                    "weights are for {}x{}, series is {p}x{q}",
                    w.p(),
                    w.q()
                )));
            }
            Ok(w)
        }
    }
}

fn eval_range(cfg: &RunConfig, panel: &VolumePanel) -> Result<std::ops::Range<usize>> {
    let n = panel.n_days();
    let first = cfg.forecast.first_day(cfg.method);
    let start = match cfg.eval_days {
        Some(0) => return Err(Error::InvalidParameter("eval_days must be >= 1".into())),
        Some(k) => n.saturating_sub(k),
        None => first,
    };
    if start < first || start >= n {
        return Err(Error::InsufficientHistory {
            needed: first + cfg.eval_days.unwrap_or(1),
            available: n,
        });
    }
    Ok(start..n)
}

fn accuracy_tables(run: &mut RunDir, forecast: &Forecast, panel: &VolumePanel, cfg: &RunConfig, label: &str) -> Result<()> {
    let errors = app::relative_error_report(forecast, panel, &cfg.sessions)?;
    run.write_with("errors.csv", |w| app::report::write_session_table(&errors, label, w))?;
    run.json("errors.json", &errors)?;
    if panel.has_prices() {
        let vwap = app::vwap_error(forecast, panel, &cfg.sessions)?;
        run.write_with("vwap.csv", |w| app::report::write_session_table(&vwap, label, w))?;
        run.json("vwap.json", &vwap)?;
    }
    Ok(())
}

fn compute_forecast(run: &mut RunDir, cfg: &RunConfig, panel: &VolumePanel) -> Result<Forecast> {
    let forecast = app::rolling_forecast(panel, cfg.method, eval_range(cfg, panel)?, &cfg.forecast)?;
    run.write_with("forecast.csv", |w| forecast.write_csv(w))?;
    let fallback: Vec<String> = forecast
        .dates
        .iter()
        .zip(&forecast.fallback)
        .filter(|(_, f)| **f)
        .map(|(d, _)| d.to_string())
        .collect();
    run.json(
        "forecast_meta.json",
        &serde_json::json!({ "method": cfg.method.name(), "days": forecast.n_days(), "fallback_days": fallback }),
    )?;
    Ok(forecast)
}

fn execute(cfg: &RunConfig, out: PathBuf) -> Result<()> {
    let mut run = RunDir::create(out)?;
    run.json("config.json", cfg)?;
    match cfg.subcommand.as_str() {
        "simulate" => {
            let report = simulate::monte_carlo(&cfg.simulation)?;
            run.write_with("report.csv", |w| report.write_csv(w))?;
            run.json("report.json", &report)?;
        }
        "fit-diag" => {
            let series = MatrixTimeSeries::from_csv_path(require(&cfg.input, "input")?)?;
            let weights = load_weights(&cfg.weights, series.p(), series.q())?;
            let fit = diag::fit_diag(&series, &weights, &cfg.fit)?;
            run.json("model.json", &fit.to_json(series.n()))?;
        }
        "fit-banded" => {
            let series = MatrixTimeSeries::from_csv_path(require(&cfg.input, "input")?)?;
            let (ka, kb) = match (cfg.ka, cfg.kb) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::InvalidParameter("fit-banded needs --kA and --kB".into())),
            };
            let fit = banded::fit_banded(&series, ka, kb, &cfg.fit)?;
            run.json("model.json", &fit.to_json())?;
        }
        "select-bandwidth" => {
            let series = MatrixTimeSeries::from_csv_path(require(&cfg.input, "input")?)?;
            let sel = banded::select_bandwidths(&series, cfg.k_max, cfg.omega_factor)?;
            run.json("bandwidths.json", &sel.to_json())?;
        }
        "forecast" => {
            let panel = VolumePanel::from_csv_path(require(&cfg.input, "input")?)?;
            let forecast = compute_forecast(&mut run, cfg, &panel)?;
            accuracy_tables(&mut run, &forecast, &panel, cfg, cfg.method.name())?;
        }
        "backtest-pov" => {
            cfg.pov.validate()?;
            let panel = VolumePanel::from_csv_path(require(&cfg.input, "input")?)?;
            let (forecast, label) = match &cfg.forecast_input {
                Some(path) => (Forecast::from_csv_path(path)?, "file".to_string()),
                None => (compute_forecast(&mut run, cfg, &panel)?, cfg.method.name().to_string()),
            };
            let bt = app::pov_backtest(&forecast, &panel, &cfg.pov)?;
            run.write_with("episodes.csv", |w| bt.write_episodes_csv(w))?;
            run.write_with("pov_summary.csv", |w| bt.write_summary_csv(w))?;
            run.write_with("impact.csv", |w| bt.write_wide_csv(&label, false, w))?;
            run.write_with("timing.csv", |w| bt.write_wide_csv(&label, true, w))?;
            run.json(
                "pov_summary.json",
                &serde_json::json!({ "summary": bt.summary, "episodes": bt.episodes.len(), "skipped": bt.skipped }),
            )?;
        }
        "report" => {
            let panel = VolumePanel::from_csv_path(require(&cfg.input, "input")?)?;
            let forecast = Forecast::from_csv_path(require(&cfg.forecast_input, "forecast")?)?;
            accuracy_tables(&mut run, &forecast, &panel, cfg, "file")?;
        }
        "synth-panel" => {
            let (panel, truth) = app::synthetic_panel(&cfg.synth)?;
            run.write_with("panel.csv", |w| panel.write_csv(w))?;
            run.json(
                "truth.json",
                &serde_json::json!({
                    "A0": model::matrix_rows(&truth.a0),
                    "A1": model::matrix_rows(&truth.a1),
                    "B0": model::matrix_rows(&truth.b0),
                    "B1": model::matrix_rows(&truth.b1),
                    "kA": truth.ka,
                    "kB": truth.kb,
                }),
            )?;
        }
        other => return Err(Error::InvalidParameter(format!("unknown subcommand {other:?}"))),
    }
    run.finish(&cfg.subcommand)
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let threads = match flag {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("{THREADS_ENV} must be an integer, got {v:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::InvalidParameter("threads must be >= 1".into()));
        }
        // A pool that already exists (repeated calls in one process) is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        2
    } else {
        1
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = configure_threads(cli.threads)
        .and_then(|_| resolve(cli.command))
        .and_then(|(cfg, out)| execute(&cfg, out));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
