use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn clipvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clipvi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.conf");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const CHAIN: &str = "\
[experiment]
algorithm = tabular_ucb_cvi
horizon = 50
seeds = 0

[env]
kind = chain
states = 3
";

#[test]
fn run_writes_series_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CHAIN);
    let out = dir.path().join("out");
    let res = clipvi(&[
        "run",
        &config,
        "--seeds",
        "1,2",
        "--horizon",
        "20",
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(res.stdout.is_empty());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,20,"));
    assert!(lines[2].starts_with("2,20,"));
    let series = fs::read_to_string(out.join("series_seed2.csv")).unwrap();
    assert_eq!(series.lines().count(), 21);
    assert!(!out.join("series_seed0.csv").exists());
}

#[test]
fn run_prints_a_table_unless_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CHAIN);
    let res = clipvi(&["run", &config]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("mean regret"));
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[experiment]\nalgorithm = nope\nhorizon = 3\n");
    let res = clipvi(&["run", &config]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("unknown algorithm"));

    let res = clipvi(&["run", "/nonexistent/file.conf"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn gen_then_solve() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CHAIN);
    let env = dir.path().join("env.txt");
    let res = clipvi(&["gen", &config, "--out", env.to_str().unwrap()]);
    assert!(res.status.success());
    let text = fs::read_to_string(&env).unwrap();
    assert!(text.contains("[transition]"));
    let res = clipvi(&["solve", env.to_str().unwrap(), "--gamma", "0.9"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("j_star"));
}

#[test]
fn lemmas_pass() {
    let res = clipvi(&["lemmas"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.lines().count() >= 8);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}
