//! Forecasting and execution on panels generated from a known banded model.

use mstar::app::{
    pov_backtest, relative_error_report, rolling_forecast, synthetic_panel, Forecast, ForecastParams, Method,
    PovConfig, PredictionClass, Session, SynthPanelConfig, VolumePanel,
};

const EVAL_DAYS: usize = 20;

fn synth(seed: u64) -> VolumePanel {
    let config = SynthPanelConfig {
        days: 82 + EVAL_DAYS,
        seed,
        ..SynthPanelConfig::default()
    };
    synthetic_panel(&config).unwrap().0
}

fn full_day_error(forecast: &Forecast, panel: &VolumePanel) -> f64 {
    let sessions = [Session::new("full_day", "09:00", "15:00").unwrap()];
    let entries = relative_error_report(forecast, panel, &sessions).unwrap();
    entries.iter().map(|e| e.value).sum::<f64>() / entries.len() as f64
}

fn evaluate(panel: &VolumePanel, method: Method) -> Forecast {
    let n = panel.n_days();
    rolling_forecast(panel, method, n - EVAL_DAYS..n, &ForecastParams::default()).unwrap()
}

#[test]
fn banded_model_beats_moving_average_on_most_panels() {
    let mut wins = 0;
    let mut report = Vec::new();
    for seed in 0..10 {
        let panel = synth(seed);
        let sma = full_day_error(&evaluate(&panel, Method::Sma), &panel);
        let banded = evaluate(&panel, Method::BandedStar);
        assert!(banded.fallback.iter().all(|f| !f), "seed {seed} fell back");
        let banded = full_day_error(&banded, &panel);
        report.push((seed, sma, banded));
        if banded < sma {
            wins += 1;
        }
    }
    assert!(wins >= 8, "banded beat sma on {wins}/10 panels: {report:?}");
}

#[test]
fn over_prediction_raises_participation_and_shortens_execution() {
    let panel = synth(4);
    let forecast = evaluate(&panel, Method::BandedStar);
    let run = pov_backtest(&forecast, &panel, &PovConfig::default()).unwrap();
    assert_eq!(run.episodes.len(), EVAL_DAYS * panel.n_assets() * 4);
    for class in [PredictionClass::Over, PredictionClass::Under] {
        let eps: Vec<_> = run.episodes.iter().filter(|e| e.class == class).collect();
        assert!(eps.len() > 20, "{class:?}: {} episodes", eps.len());
        let impact = eps.iter().map(|e| e.impact_pct).sum::<f64>() / eps.len() as f64;
        let timed: Vec<f64> = eps.iter().filter_map(|e| e.timing_pct).collect();
        let timing = timed.iter().sum::<f64>() / timed.len() as f64;
        match class {
            PredictionClass::Over => {
                assert!(eps.iter().all(|e| e.impact_pct > 0.0));
                assert!(impact > 0.0 && timing < 0.0, "over: impact {impact} timing {timing}");
            }
            PredictionClass::Under => {
                assert!(eps.iter().all(|e| e.impact_pct <= 1e-9));
                assert!(impact < 0.0 && timing > 0.0, "under: impact {impact} timing {timing}");
            }
        }
    }
    for s in &run.summary {
        if s.timing_episodes > 0 {
            match s.class {
                PredictionClass::Over => assert!(s.mean_impact_pct > 0.0 && s.mean_timing_pct <= 0.0, "{s:?}"),
                PredictionClass::Under => assert!(s.mean_impact_pct < 0.0 && s.mean_timing_pct >= 0.0, "{s:?}"),
            }
        }
    }
}

#[test]
fn doubled_forecast_doubles_participation() {
    let panel = synth(1);
    let n = panel.n_days();
    let doubled = Forecast::oracle(&panel, n - 5..n).unwrap().scaled(2.0).unwrap();
    let run = pov_backtest(&doubled, &panel, &PovConfig::default()).unwrap();
    for e in &run.episodes {
        assert!((e.impact_pct - 100.0).abs() < 1e-9, "{}", e.impact_pct);
        assert_eq!(e.class, PredictionClass::Over);
    }
}
