use std::fs;
use std::path::Path;
use std::process::Command;

use parisi_bounds::model::log_cosh;
use parisi_bounds::Error;
use serde_json::Value;

fn run(args: &[&str], dir: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_parisi-bounds"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn report(dir: &Path, out: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(out).join("report.json")).unwrap()).unwrap()
}

const FAST: [&str; 6] = ["--paths", "2000", "--nx", "601", "--nt", "1000"];

#[test]
fn eval_trivial_model_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.json"), r#"{"beta": {}, "h": 0.3}"#).unwrap();
    let mut args = vec!["eval", "--model", "m.json", "--out", "o"];
    args.extend(FAST);
    let (code, stdout, stderr) = run(&args, dir.path());
    assert_eq!(code, 0, "{stdout}{stderr}");
    let r = report(dir.path(), "o");
    let (up, lo, gap) = (r["upper"].as_f64().unwrap(), r["lower"].as_f64().unwrap(), r["gap"].as_f64().unwrap());
    assert!((up - log_cosh(0.3)).abs() < 1e-10 && (lo - log_cosh(0.3)).abs() < 1e-10 && gap == 0.0);
    for key in ["lower_conservative", "argmin_g", "support_distances", "warnings", "seeds", "grid", "config", "version"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    let curves = fs::read_to_string(dir.path().join("o/curves.csv")).unwrap();
    assert!(curves.starts_with("t,Ealpha2_mc,stderr,Ealpha2_pde\n"));
}

#[test]
fn sk_high_temperature_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["certify", "--out", "o", "--phi-csv"];
    args.extend(FAST);
    let (code, stdout, _) = run(&args, dir.path());
    assert_eq!(code, 0);
    assert!(stdout.contains("support condition   pass"));
    let r = report(dir.path(), "o");
    assert!((r["upper"].as_f64().unwrap() - 0.125).abs() < 1e-4);
    assert!(r["gap"].as_f64().unwrap() <= 1e-3);
    assert!(dir.path().join("o/phi.csv").exists());
}

#[test]
fn identical_runs_differ_only_in_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let mut args = vec!["eval", "--out", out, "--seed", "9"];
        args.extend(FAST);
        assert_eq!(run(&args, dir.path()).0, 0);
    }
    let strip = |out: &str| {
        let mut r = report(dir.path(), out);
        r["config"]["out"] = Value::Null;
        r.as_object_mut().unwrap().remove("timestamp");
        r
    };
    assert_eq!(strip("a"), strip("b"));
    assert_eq!(fs::read(dir.path().join("a/curves.csv")).unwrap(), fs::read(dir.path().join("b/curves.csv")).unwrap());
}

#[test]
fn configuration_errors_exit_2_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("w.json"), r#"{"atoms": [{"q": 0.2, "w": 0.5}, {"q": 0.6, "w": 0.4}]}"#).unwrap();
    fs::write(p.join("k.json"), r#"{"atoms": [{"q": 0.2, "w": 1.0}], "extra": 1}"#).unwrap();
    fs::write(p.join("b.json"), r#"{"beta": {"2": 0.5, "1": 0.3}}"#).unwrap();
    fs::write(p.join("n.json"), r#"{"beta": {"two": 0.5}}"#).unwrap();
    let cases = [
        (vec!["eval", "--measure", "w.json"], "sum to 1"),
        (vec!["eval", "--measure", "k.json"], "extra"),
        (vec!["eval", "--model", "b.json"], "beta key \"1\""),
        (vec!["eval", "--model", "n.json"], "beta key \"two\""),
        (vec!["eval", "--measure", "missing.json"], "missing.json"),
        (vec!["finite-n", "--n", "21"], "N = 21"),
        (vec!["optimize", "--k", "0"], "k must be"),
        (vec!["eval", "--bogus-flag"], "bogus"),
    ];
    for (args, needle) in cases {
        let (code, _, stderr) = run(&args, p);
        assert_eq!(code, 2, "{args:?}: {stderr}");
        assert!(stderr.contains(needle), "{args:?}: {stderr}");
    }
}

#[test]
fn numerical_errors_map_to_exit_3() {
    assert_eq!(Error::Numerical("x".into()).exit_code(), 3);
    assert_eq!(Error::Inconsistency("x".into()).exit_code(), 3);
    assert_eq!(Error::Resource("x".into()).exit_code(), 2);
}

#[test]
fn crosscheck_passes_by_default_and_fails_on_a_coarse_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run(&["crosscheck", "--paths", "20000", "--out", "a"], dir.path());
    assert_eq!(code, 0, "{stdout}");
    assert_eq!(stdout.matches("pass").count(), 4);
    let (code, stdout, _) = run(&["crosscheck", "--paths", "5000", "--nx", "101", "--out", "b"], dir.path());
    assert_eq!(code, 1, "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("pde_vs_rpc") && l.ends_with("FAIL")));
    assert_eq!(report(dir.path(), "b")["pass"], Value::Bool(false));
}

#[test]
fn crosscheck_trivial_model_has_exact_zeros() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.json"), r#"{"h": 0.3}"#).unwrap();
    let (code, _, _) = run(&["crosscheck", "--model", "m.json", "--paths", "500", "--out", "o"], dir.path());
    assert_eq!(code, 0);
    for c in report(dir.path(), "o")["checks"].as_array().unwrap() {
        assert!(c["measured"].as_f64().unwrap() < 1e-15, "{c}");
    }
}

#[test]
fn optimize_trivial_and_budget_contract() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.json"), r#"{"h": 0.5}"#).unwrap();
    let (code, _, _) = run(&["optimize", "--model", "m.json", "--k", "2", "--out", "t"], dir.path());
    assert_eq!(code, 0);
    let r = report(dir.path(), "t");
    assert_eq!(r["optimization"]["converged"], Value::Bool(true));
    assert!((r["upper"].as_f64().unwrap() - log_cosh(0.5)).abs() < 1e-12);

    let (code, stdout, _) = run(&["optimize", "--budget", "1", "--k-max", "1", "--nt", "1000", "--out", "b"], dir.path());
    assert_eq!(code, 0);
    assert!(stdout.contains("converged           false") && stdout.contains("warning: budget"));
    let trace = fs::read_to_string(dir.path().join("b/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,k,upper,gap,atoms,weights\n"));
    assert!(dir.path().join("b/measure.json").exists());
}

#[test]
fn finite_n_against_a_bracket() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("m.json"), r#"{"h": 0.4}"#).unwrap();
    let (code, _, _) = run(&["finite-n", "--model", "m.json", "--n", "6", "--out", "f"], p);
    assert_eq!(code, 0);
    let r = report(p, "f");
    assert_eq!(r["estimate"].as_f64().unwrap(), log_cosh(0.4));
    assert_eq!(r["std_err"].as_f64().unwrap(), 0.0);

    fs::write(p.join("inside.json"), r#"{"lower": 0.10, "upper": 0.13}"#).unwrap();
    fs::write(p.join("outside.json"), r#"{"lower": 0.5, "upper": 0.6}"#).unwrap();
    let args = |c: &'static str| vec!["finite-n", "--n", "8", "--samples", "50", "--certificate", c, "--out", "g"];
    assert_eq!(run(&args("inside.json"), p).0, 0);
    assert_eq!(run(&args("outside.json"), p).0, 1);
    assert_eq!(report(p, "g")["envelope"]["pass"], Value::Bool(false));
}
