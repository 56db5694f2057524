use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn amem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amem")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_then_fit_is_reproducible() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("vws.csv");
    let o = amem(&["generate", "--preset", "vws", "--n", "300", "--seed", "3", "--output", path(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let run = |model: &Path| {
        let o = amem(&["fit", "--input", path(&data), "--algo", "aamem", "--kinit", "3", "--seed", "7", "--output", path(model)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let line = stdout(&o).lines().next().unwrap().to_string();
        // everything but the wall clock must match
        line.split_whitespace().filter(|f| !f.starts_with("elapsed_s=")).collect::<Vec<_>>().join(" ")
    };
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert_eq!(run(&a), run(&b));
    assert_eq!(std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
}

#[test]
fn fit_writes_a_trace_that_plots() {
    let dir = tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let svg = dir.path().join("t.svg");
    let o = amem(&["fit", "--preset", "ps", "--n", "300", "--algo", "aem", "--kinit", "5", "--trace", path(&trace)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("iter,objective,K_active,choice,kills,elapsed_s"));

    let labelled = format!("A-EM={}", path(&trace));
    let o = amem(&["plot", &labelled, "--output", path(&svg), "--log-x"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = std::fs::read_to_string(&svg).unwrap();
    assert!(doc.contains("<polyline") && doc.contains("A-EM"));
}

#[test]
fn bench_reports_one_row_per_accelerated_run() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("report.csv");
    let o = amem(&["bench", "--preset", "vws", "--kinit", "3", "--runs", "1", "--n", "300", "--algos", "aem,aamem", "--output", path(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("initialization excluded"));
    let rows: Vec<String> = std::fs::read_to_string(&csv).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("vws,3,0,aamem,aem,"));
}

#[test]
fn gapstat_prints_the_chosen_k() {
    let o = amem(&["gapstat", "--preset", "vws", "--n", "300", "--k-max", "5", "--b", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("K_opt=")));
    assert_eq!(out.lines().filter(|l| l.trim_start().starts_with(|c: char| c.is_ascii_digit())).count(), 4);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(amem(&["fit", "--algo", "nope"]).status.code(), Some(1));
    assert_eq!(amem(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(amem(&["fit", "--input", "/definitely/not/here.csv"]).status.code(), Some(1));
    assert_eq!(amem(&["fit", "--preset", "vws", "--n", "50", "--eps-mono", "0.5"]).status.code(), Some(1));
    assert_eq!(amem(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_dataset_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "x0,x1\n1.0,2.0\n3.0\n").unwrap();
    let o = amem(&["fit", "--input", path(&data)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn numerical_failures_exit_with_two() {
    // more components than distinct points cannot be seeded
    let dir = tempdir().unwrap();
    let data = dir.path().join("tiny.csv");
    std::fs::write(&data, "x0\n1.0\n1.0\n2.0\n").unwrap();
    let o = amem(&["fit", "--input", path(&data), "--kinit", "3", "--algo", "em"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
