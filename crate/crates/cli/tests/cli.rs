use std::f64::consts::TAU;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn lagsym(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lagsym"))
        .args(args)
        .env_remove("LAGSYM_SEED")
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn scratch(name: &str, text: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("lagsym-cli-{}-{name}", std::process::id()));
    std::fs::write(&p, text).unwrap();
    p
}

fn last_csv_row(out: &Output) -> Vec<f64> {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    text.lines()
        .last()
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect()
}

#[test]
fn analyze_oscillator_has_no_constraints_or_symmetries() {
    let r = json(&lagsym(&["analyze", "oscillator"]));
    assert_eq!(r["schema"], "lagsym-report/1");
    assert_eq!(r["ledger"]["n0"], 0);
    assert_eq!(r["row"], serde_json::json!([0, 0, 0, 0, 0]));
    assert_eq!(r["kernel"]["all_counts_agree"], true);
    assert_eq!(r["provenance"]["settings"]["samples"], 64);
}

#[test]
fn analyze_generic_potential_terminates_at_second_order() {
    let r = json(&lagsym(&["analyze", "s1_generic", "--seed", "11"]));
    assert_eq!(r["ledger"]["n_f"], 2);
    assert_eq!(r["ledger"]["termination"], "fixed-point");
    assert_eq!(r["row"], serde_json::json!([1, 0, 0, 1, 0]));
    assert_eq!(r["provenance"]["seed"], 11);
}

#[test]
fn reports_are_reproducible_and_seed_falls_back_to_environment() {
    let a = lagsym(&["analyze", "s2"]);
    let b = lagsym(&["analyze", "s2"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["row"], serde_json::json!([2, 1, 1, 1, 1]));

    let out = Command::new(env!("CARGO_BIN_EXE_lagsym"))
        .args(["analyze", "oscillator"])
        .env("LAGSYM_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(json(&out)["provenance"]["seed"], 77);
}

#[test]
fn text_format_and_output_file() {
    let path = std::env::temp_dir().join(format!("lagsym-cli-{}-report.txt", std::process::id()));
    let out = lagsym(&[
        "analyze",
        "s3",
        "--format",
        "text",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("dim Sym              2"), "{text}");
}

#[test]
fn exit_codes() {
    let bad = scratch("bad.lag", "dim 2; L = 0.5*v[3]^2");
    let out = lagsym(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of range"));

    let empty = scratch("empty.lag", "dim 2; L = 0.5*v[1]^2 - q[2]");
    assert_eq!(
        lagsym(&["analyze", empty.to_str().unwrap()]).status.code(),
        Some(4)
    );

    assert_eq!(
        lagsym(&["analyze", "no-such-file.lag"]).status.code(),
        Some(1)
    );
    assert_eq!(
        lagsym(&["analyze", "oscillator", "--samples", "4"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        lagsym(&["table1", "--format", "yaml"]).status.code(),
        Some(2)
    );
}

#[test]
fn integrate_oscillator_over_one_period() {
    let out = lagsym(&[
        "integrate",
        "oscillator",
        "--q0",
        "1",
        "--v0",
        "0",
        "--t-end",
        &TAU.to_string(),
        "--dt",
        "0.5",
    ]);
    let row = last_csv_row(&out);
    assert!((row[0] - TAU).abs() < 1e-12);
    assert!(
        (row[1] - 1.0).abs() < 1e-6 && row[2].abs() < 1e-6,
        "{row:?}"
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("max energy drift"));
}

#[test]
fn integrate_interacting_pair_reports_small_constraint() {
    let out = lagsym(&[
        "integrate",
        "s2",
        "--t-end",
        "2",
        "--dt",
        "0.5",
        "--format",
        "json",
    ]);
    let t = json(&out);
    assert!(t["summary"]["max_constraint"].as_f64().unwrap() < 1e-6);
    assert!(t["summary"]["max_energy_drift"].as_f64().unwrap() < 1e-6);
}

#[test]
fn integrate_radial_gauge_keeps_direction() {
    let out = lagsym(&[
        "integrate",
        "s3",
        "--q0",
        "0.8,0.3,-0.2",
        "--v0",
        "0.1,0.6,0.3",
        "--t-end",
        "0.5",
        "--base",
        "reduced",
        "--gauge",
        "1 : q[1]/norm(q), q[2]/norm(q), q[3]/norm(q)",
    ]);
    let row = last_csv_row(&out);
    let q = [row[1], row[2], row[3]];
    let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
    let r0 = (0.64f64 + 0.09 + 0.04).sqrt();
    assert!((r - r0 - 0.5).abs() < 1e-8);
    assert!((q[0] / r - 0.8 / r0).abs() < 1e-8 && (q[1] / r - 0.3 / r0).abs() < 1e-8);

    let rejected = lagsym(&["integrate", "s1_generic", "--gauge", "1 : q[1], q[2], q[3]"]);
    assert_eq!(rejected.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&rejected.stderr).contains("gauge term 0 rejected"));
}

#[test]
fn table1_matches() {
    let out = lagsym(&["table1"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("all cells match"));
    let out = lagsym(&["table1", "--format", "json"]);
    assert_eq!(json(&out)["all_match"], true);
}
