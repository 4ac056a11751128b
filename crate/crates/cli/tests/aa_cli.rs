//! End-to-end behaviour of the `multifreq` binary.
//!
//! Named to sort before the `acceptance` target: cargo runs test targets
//! alphabetically and stops at the first failing one.

use std::path::Path;
use std::process::{Command, Output};

use multifreq::spectra::{detuning_scan, ShellScanConfig};

const BIN: &str = env!("CARGO_BIN_EXE_multifreq");

fn run(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).arg("--out").arg(dir);
    if let Some(text) = config {
        let p = dir.join("run.toml");
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(&p, text).unwrap();
        cmd.arg("--config").arg(p);
    }
    cmd.output().unwrap()
}

fn recipe(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

#[test]
fn gamma_rows_sum_to_one_minus_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gamma"], Some("[[modes]]\nk = 1\nalpha = 1.0\n[[modes]]\nk = 2\nalpha = 1.0\n[gamma]\nepsilon = 1e-9\n"), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("gamma.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("N,gamma_sq"));
    let sum: f64 = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!(sum <= 1.0 + 1e-14 && sum >= 1.0 - 1e-9, "sum {sum}");
}

#[test]
fn unknown_key_exits_one_with_json_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["evolve"], Some("[evolve]\nomega_0_typo = 2\ng_ratio = -1\n"), dir.path());
    assert_eq!(out.status.code(), Some(1));
    let records: Vec<serde_json::Value> =
        String::from_utf8(out.stderr).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert!(records.iter().any(|r| r["path"] == "evolve.omega_0_typo"));
    assert!(records.iter().any(|r| r["path"] == "evolve.g_ratio"));
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // a scan window that cannot contain the q = 0 crossing
    let cfg = "[[modes]]\nk = 9\nrabi = 0.2\n[[modes]]\nk = 10\nrabi = 0.2\n[[modes]]\nk = 11\nrabi = 0.2\n\
               [spectrum]\ndelta_min = -0.1\ndelta_max = 0.1\nsamples = 11\ncrossings = [0]\n";
    let out = run(&["spectrum"], Some(cfg), dir.path());
    assert_eq!(out.status.code(), Some(2));
    let rec: serde_json::Value = serde_json::from_str(String::from_utf8(out.stderr).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(rec["kind"], "window_too_narrow");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["nonsense"], None, dir.path()).status.code(), Some(1));
    assert_eq!(run(&["gamma", "--format", "xml"], None, dir.path()).status.code(), Some(1));
    assert_eq!(run(&["gamma"], None, dir.path()).status.code(), Some(1));
}

#[test]
fn resonance_recipe_reproduces_the_library_scan() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["spectrum", "--dump-basis"], Some(&recipe("resonance_scan.toml")), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = ShellScanConfig::balanced(10, 0.2, 12).unwrap();
    let scan = detuning_scan(&cfg, (-2.5, 2.5), 401).unwrap();
    let mut want = Vec::new();
    scan.write_csv(&mut want).unwrap();
    assert_eq!(std::fs::read(dir.path().join("spectrum.csv")).unwrap(), want);
    let crossings = std::fs::read_to_string(dir.path().join("crossings.csv")).unwrap();
    assert_eq!(crossings.lines().count(), 4);
    assert!(dir.path().join("basis.csv").exists());
}

#[test]
fn pathology_flags_broken_degeneracies() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["pathology"], Some(&recipe("pathology.toml")), dir.path());
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("pathology.csv")).unwrap();
    assert!(text.starts_with("occupations,spin,unperturbed,dressed,broken_degeneracy\n"));
    assert!(text.lines().any(|l| l.ends_with(",true")));
    assert!(text.lines().any(|l| l.ends_with(",false")));
}

#[test]
fn json_format_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["effective", "--format", "json", "--svg"], Some(&recipe("effective_q2.toml")), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("effective.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 201);
    assert_eq!(rows[0]["q"], 2);
    let p = rows.as_array().unwrap().iter().map(|r| r["p_peak"].as_f64().unwrap()).fold(0.0, f64::max);
    assert!(p > 0.99);
    assert!(std::fs::read_to_string(dir.path().join("effective.svg")).unwrap().starts_with("<svg"));
    assert!(!dir.path().join("effective.csv").exists());
}

#[test]
fn evolve_reports_the_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["evolve"], Some("[evolve]\nalpha = 1.0\nomega0_field = 3\ng_ratio = 0.1\nsamples = 1001\nextent = 2\n"), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(dir.path().join("trace_shell.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 2001);
    let summary = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let l2: f64 = summary.lines().find(|l| l.starts_with("l2,")).unwrap()[3..].parse().unwrap();
    assert!(l2 > 0.0 && l2 < 1e-3);
}

#[test]
fn help_lists_every_subcommand() {
    let out = Command::new(BIN).arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["gamma", "spectrum", "effective", "evolve", "scan", "pathology", "selftest"] {
        assert!(text.contains(sub), "{sub}");
    }
}

#[test]
fn every_recipe_parses() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let tmp = tempfile::tempdir().unwrap();
        // the gamma subcommand validates the whole file before running
        let out = Command::new(BIN).args(["gamma", "--config"]).arg(&p).arg("--out").arg(tmp.path()).output().unwrap();
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(!stderr.contains("\"kind\":\"config\"") || stderr.contains("needs"), "{}: {stderr}", p.display());
        n += 1;
    }
    assert!(n >= 6);
}
