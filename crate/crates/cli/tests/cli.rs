use std::io::Write;
use std::path::PathBuf;
use std::process::Command;

use gaussbound_cli::run_with;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("gaussbound").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn help_and_version_exit_zero() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("check-bounds"));
    let (code, out, _) = run(&["--version"]);
    assert_eq!(code, 0);
    assert!(out.contains("0.1.0"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]).0, 2);
    assert_eq!(run(&["eval"]).0, 2);
    assert_eq!(run(&["eval", "--config", "/nonexistent/x.cfg"]).0, 2);
    let ex1 = config("ex1.cfg");
    let (code, _, err) = run(&["eval", "--config", ex1.to_str().unwrap(), "--at", "1,2,3"]);
    assert_eq!(code, 2);
    assert!(err.contains("--at"), "{err}");
}

#[test]
fn bad_config_reports_line() {
    let bad = config("bad.cfg");
    let (code, _, err) = run(&["constants", "--config", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("bad.cfg:4:"), "{err}");
}

#[test]
fn syntax_error_in_coefficient_is_positioned() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "n = 1\nalpha = 1\nkappa = 1\nM = 2\nN1 = 0\na[1][1] = 1 + sin(x1").unwrap();
    let (code, _, err) = run(&["constants", "--config", f.path().to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains(":6:"), "{err}");
}

#[test]
fn constants_json_is_parseable() {
    let ex1 = config("ex1.cfg");
    let (code, out, _) = run(&["constants", "--config", ex1.to_str().unwrap(), "--json", "--eps", "0.25"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let names: Vec<&str> = v["constants"].as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    for want in ["c", "Ctilde", "Lambda", "S", "Chat", "mu", "delta", "nu", "C0", "aleph0", "aleph3"] {
        assert!(names.contains(&want), "missing {want} in {names:?}");
    }
    assert_eq!(v["epsilon"]["eps"].as_f64(), Some(0.25));
}

#[test]
fn eval_writes_csv_with_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rows.csv");
    let ex2 = config("heat2d.cfg");
    let (code, _, err) = run(&[
        "eval",
        "--config",
        ex2.to_str().unwrap(),
        "--at",
        "0.1,0.2,0.5",
        "--at",
        "-0.3,0.0,1.0",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "x_1,x_2,t,xi_1,xi_2,tau,E,lower_env,upper_env,margin_low,margin_high"
    );
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|s| s.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r.len(), 11);
        assert!(r[7] <= r[6] && r[6] <= r[8], "{r:?}");
    }
}

#[test]
fn eval_is_reproducible_for_a_seed() {
    let ex1 = config("ex1.cfg");
    let args = ["eval", "--config", ex1.to_str().unwrap(), "--queries", "6", "--seed", "11", "--json"];
    let (c1, a, _) = run(&args);
    let (c2, b, _) = run(&args);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(a, b);
}

#[test]
fn check_bounds_passes_for_heat_including_long_times() {
    let ex1 = config("ex1.cfg");
    let (code, out, err) = run(&[
        "check-bounds",
        "--config",
        ex1.to_str().unwrap(),
        "--queries",
        "40",
        "--horizon",
        "3",
        "--json",
    ]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["queries"].as_u64(), Some(40));
    assert_eq!(v["lower_violations"].as_u64(), Some(0));
}

#[test]
fn check_identities_and_lemma21_pass() {
    let ex2 = config("heat2d.cfg");
    assert_eq!(run(&["check-identities", "--config", ex2.to_str().unwrap(), "--queries", "50"]).0, 0);
    assert_eq!(run(&["lemma21"]).0, 0);
}

#[test]
fn oracle_compare_threshold_controls_exit_code() {
    let ex1 = config("ex1.cfg");
    let p = ex1.to_str().unwrap();
    assert_eq!(run(&["oracle-compare", "--config", p]).0, 0);
    let (code, _, err) = run(&["oracle-compare", "--config", p, "--max-rel", "1e-9"]);
    assert_eq!(code, 1);
    assert!(err.contains("check failed"), "{err}");
}

#[test]
fn series_reports_iterates() {
    let ex2 = config("heat2d.cfg");
    let (code, out, err) = run(&["series", "--config", ex2.to_str().unwrap(), "--at", "0.2,0.1,0.3", "--json"]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    // Constant coefficients: every Levi iterate vanishes.
    assert_eq!(v["phi"].as_f64(), Some(0.0));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_gaussbound");
    let status = Command::new(bin).arg("--version").stdout(std::process::Stdio::null()).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let status = Command::new(bin)
        .args(["constants", "--config"])
        .arg(config("bad.cfg"))
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
