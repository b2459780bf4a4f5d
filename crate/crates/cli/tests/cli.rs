use flatsaddle_cli::config::ExperimentConfig;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn out_dir(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&p);
    p
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flatsaddle"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env("FLATSADDLE_GIT_REV", "test")
        .output()
        .unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn partition_fixture_end_to_end() {
    let d = out_dir("partition");
    let o = run(&d, &["partition", "--fn", "oscflat", "--r", "3", "--lambda-min", "-40"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&d);
    assert_eq!(r["command"], "partition");
    assert_eq!(r["pass"], true);
    assert_eq!(r["config"]["fn"], "oscflat");
    assert_eq!(r["result"]["partition"]["lambda_min"], -40);
    let counts = fs::read_to_string(d.join("counts.csv")).unwrap();
    assert!(counts.starts_with("level,count,bound\n"));
    assert!(counts.lines().count() > 10);
}

#[test]
fn config_file_matches_flags() {
    let (a, b) = (out_dir("flags"), out_dir("config"));
    run(&a, &["certificate", "--instances", "20", "--seed", "3"]);
    let cfg = b.with_extension("json");
    fs::write(&cfg, r#"{"command": "certificate", "instances": 20, "r_max": 4, "pivot": 0.0, "gap": 1.0, "parity": "even-first", "seed": 3}"#)
        .unwrap();
    let o = run(&b, &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    assert_eq!(fs::read(a.join("verdicts.csv")).unwrap(), fs::read(b.join("verdicts.csv")).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (out_dir("rerun-a"), out_dir("rerun-b"));
    let args = ["geometry", "check-sizeofdeltas", "--eps", "0.25", "--rho", "2^-2", "--delta", "4", "--c0", "8", "--n", "50", "--seed", "9"];
    assert_eq!(run(&a, &args).status.code(), Some(0));
    assert_eq!(run(&b, &args).status.code(), Some(0));
    for f in ["report.json", "pairs.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn out_of_range_configs_are_usage_errors() {
    let d = out_dir("usage");
    let cases: [(&[&str], &str); 5] = [
        (&["scan-strip", "--r", "3"], "scan-strip.r"),
        (&["scan-bilinear", "--p", "1.5", "--seed", "1"], "scan-bilinear.p"),
        (&["certificate"], "certificate.seed"),
        (&["wavepacket", "count", "--gamma", "0.3", "--seed", "1"], "wavepacket.gamma"),
        (&["accept", "--seed", "1", "--only", "14"], "accept.only"),
    ];
    for (args, field) in cases {
        let o = run(&d, args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(field), "{args:?}");
    }
    // clap's own parse errors share the status
    assert_eq!(run(&d, &["partition"]).status.code(), Some(2));
}

#[test]
fn library_errors_exit_with_four() {
    let d = out_dir("unknown");
    let o = run(&d, &["partition", "--fn", "nosuch", "--lambda-min", "-4"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn failed_checks_exit_with_one() {
    // points of x² that do not alternate around 0.5
    let d = out_dir("invalid-cert");
    let o = run(&d, &["certificate", "--fn", "monomial:2", "--points", "0.1,0.2,0.3", "--pivot", "0.5", "--gap", "0.1"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&d)["result"]["invalid"], 1);
}

#[test]
fn whitney_tilings_pass() {
    let d = out_dir("whitney");
    let o = run(&d, &["geometry", "whitney", "--cell-exp", "-4"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(&d)["result"]["rectangle_mismatches"], 0);
}

#[test]
fn configs_round_trip_through_json() {
    let text = r#"{"command": "wavepacket", "action": "check", "surface": "cubic-sixth", "eps": 0.5,
        "region": "0.1,0.35:0.2,0.45", "density": "random", "cells": 8, "amplitude": "unit", "seed": 4,
        "R": 16.0, "kappa": 1.0, "window": 10}"#;
    let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
    cfg.validate().unwrap();
    let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"command": "accept", "seed": 1, "bogus": 2}"#).is_err());
}
