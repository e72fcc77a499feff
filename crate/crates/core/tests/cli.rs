//! End-to-end runs of the `mstar` binary.

mod common;

use common::{every_subcommand_twice, files, mstar, Fixture};
use std::fs;
use std::path::Path;

#[test]
fn every_subcommand_is_byte_identical_across_runs() {
    every_subcommand_twice(&Fixture::new());
}

#[test]
fn resolved_config_replays_the_run() {
    let fx = Fixture::new();
    let panel = fx.path("synth/panel.csv");
    let first = fx.path("first");
    let (code, err) = mstar(&[
        "forecast", "--input", &panel, "--method", "banded_star", "--lookback", "5", "--fit-window", "20",
        "--eval-days", "3", "--seed", "4", "--out", &first,
    ]);
    assert_eq!(code, 0, "{err}");
    let replay = fx.path("replay");
    let config = fx.path("first/config.json");
    let (code, err) = mstar(&["forecast", "--config", &config, "--out", &replay]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(files(Path::new(&first)), files(Path::new(&replay)));
}

#[test]
fn exit_codes_distinguish_usage_input_and_numeric_failures() {
    let fx = Fixture::new();
    assert_eq!(mstar(&["simulate", "--no-such-flag"]).0, 1);
    assert_eq!(mstar(&["--help"]).0, 0);
    let out = fx.path("bad");
    let missing = fx.path("missing.csv");
    assert_eq!(mstar(&["fit-banded", "--input", &missing, "--kA", "1", "--kB", "1", "--out", &out]).0, 1);

    // A constant series has a singular covariance: numeric failure.
    let flat = fx.root.join("flat.csv");
    let mut text = String::from("t,i,j,value\n");
    for t in 0..20 {
        for j in 0..3 {
            for i in 0..3 {
                text.push_str(&format!("{},{},{},1\n", t + 1, i + 1, j + 1));
            }
        }
    }
    fs::write(&flat, text).unwrap();
    let flat = flat.to_string_lossy().into_owned();
    let (code, err) = mstar(&["fit-banded", "--input", &flat, "--kA", "1", "--kB", "1", "--out", &out]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn threads_setting_does_not_change_results() {
    let fx = Fixture::new();
    let a = fx.path("t1");
    let b = fx.path("t2");
    let args = ["simulate", "--kind", "diag", "--p", "4", "--q", "4", "--n", "200", "--reps", "4", "--seed", "3"];
    let mut one: Vec<&str> = args.to_vec();
    one.extend(["--threads", "1", "--out", &a]);
    let mut two: Vec<&str> = args.to_vec();
    two.extend(["--threads", "2", "--out", &b]);
    assert_eq!(mstar(&one).0, 0);
    assert_eq!(mstar(&two).0, 0);
    assert_eq!(files(Path::new(&a)), files(Path::new(&b)));
}
