use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_lmapprox");
const PEER: &str = env!("CARGO_BIN_EXE_lmapprox-peer");

fn lmapprox(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// 22,000 characters; validation split is 1,100 tokens.
fn fox_corpus(dir: &Path) -> PathBuf {
    let path = dir.join("fox.txt");
    std::fs::write(&path, "the quick brown fox jumps over the lazy dog ".repeat(500)).unwrap();
    path
}

#[test]
fn plan_n_prints_the_bound_then_json() {
    let o = lmapprox(&["plan-n", "--gamma", "1e-3", "--epsilon", "1e-2", "--vocab-size", "27"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("4297078"));
    let json: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(json["n"], 4_297_078);
    assert_eq!(json["vocab_size"], 27);

    let o = lmapprox(&["plan-n", "--gamma", "1e-3", "--epsilon", "1e-2", "--vocab-size", "50000"]);
    assert_eq!(stdout(&o).lines().next(), Some("8059048"));
}

#[test]
fn plan_n_rejects_gamma_outside_the_unit_interval() {
    let o = lmapprox(&["plan-n", "--gamma", "2", "--epsilon", "1e-2", "--vocab-size", "27"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn exit_codes() {
    assert_eq!(lmapprox(&["--help"]).status.code(), Some(0));
    assert_eq!(lmapprox(&["evaluate"]).status.code(), Some(1));
    assert_eq!(
        lmapprox(&["evaluate", "--generator", "builtin:uniform", "--corpus", "/no/such/file"]).status.code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "Hello").unwrap();
    let o = lmapprox(&["evaluate", "--generator", "builtin:uniform", "--corpus", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("offset 0"), "{}", stderr(&o));
}

#[test]
fn evaluate_writes_report_and_per_position_csv() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fox_corpus(dir.path());
    let out = dir.path().join("report.json");
    let csv = dir.path().join("losses.csv");
    let o = lmapprox(&[
        "evaluate",
        "--generator",
        "builtin:uniform",
        "--corpus",
        corpus.to_str().unwrap(),
        "--n",
        "100",
        "--end",
        "301",
        "--out",
        out.to_str().unwrap(),
        "--per-position",
        csv.to_str().unwrap(),
        "--true-bpc",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("approx bpc"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["token_count"], 300);
    assert_eq!(report["n_used"], 100);
    assert_eq!(report["eta_used"], 1e-3);
    assert!((report["true_report"]["bpc"].as_f64().unwrap() - 27f64.log2()).abs() < 1e-12);
    let bpc = report["bpc"].as_f64().unwrap();
    assert_eq!(report["perplexity"].as_f64().unwrap(), bpc.exp2());
    for key in [
        "generator",
        "corpus",
        "split",
        "n_samples",
        "smoothing_eta",
        "prefix_window",
        "seed",
        "start",
        "end",
        "stride",
    ] {
        assert!(report["config"].get(key).is_some(), "config.{key} missing");
    }
    assert!(report["config"].get("workers").is_none());
    let csv = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(csv.lines().next(), Some("t,loss_bits,raw_gold_prob"));
    assert_eq!(csv.lines().count(), 301);
}

#[test]
fn evaluate_is_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fox_corpus(dir.path());
    let run = |workers: &str| {
        let o = lmapprox(&[
            "evaluate",
            "--generator",
            "builtin:uniform",
            "--corpus",
            corpus.to_str().unwrap(),
            "--n",
            "300",
            "--stride",
            "7",
            "--seed",
            "99",
            "--workers",
            workers,
        ]);
        assert!(o.status.success());
        o.stdout
    };
    assert_eq!(run("1"), run("8"));
}

#[test]
fn external_generator_matches_builtin_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fox_corpus(dir.path());
    let c = corpus.to_str().unwrap();
    let markov = format!("builtin:markov:order=2:train={c}");
    let external = format!("external:cmd='{PEER}' --generator {markov}");
    let run = |generator: &str| {
        let o = lmapprox(&[
            "evaluate",
            "--generator",
            generator,
            "--corpus",
            c,
            "--n",
            "500",
            "--stride",
            "50",
            "--batch-limit",
            "128",
            "--true-bpc",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut v: Value = serde_json::from_slice(&o.stdout).unwrap();
        v.as_object_mut().unwrap().remove("config");
        v
    };
    assert_eq!(run(&markov), run(&external));
}

#[test]
fn select_n_golden_run() {
    // Curve values checked against an independent re-implementation of the
    // sample stream and the sup-norm recurrence.
    let dir = tempfile::tempdir().unwrap();
    let corpus = fox_corpus(dir.path());
    let o = lmapprox(&[
        "select-n",
        "--generator",
        "builtin:uniform",
        "--corpus",
        corpus.to_str().unwrap(),
        "--seed",
        "7",
        "--subset-size",
        "16",
        "--n-max",
        "2000",
        "--gamma-prime",
        "5e-3",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["status"], "converged");
    assert_eq!(v["chosen_n"], 320);
    assert_eq!(v["positions_used"], 16);
    let positions: Vec<u64> = serde_json::from_value(v["positions"].clone()).unwrap();
    assert_eq!(positions, [152, 172, 198, 183, 294, 767, 40, 793, 78, 658, 888, 394, 266, 92, 281, 934]);
    let points = v["curve"]["points"].as_array().unwrap();
    assert_eq!(points.len(), 199);
    assert_eq!(points[0]["n"], 20);
    assert_eq!(points[0]["error"], 0.10312500000000002);
    assert_eq!(points[1]["error"], 0.06249999999999999);
    assert_eq!(points[2]["error"], 0.044270833333333336);
    assert_eq!(points[198]["n"], 2000);
    assert_eq!(points[198]["error"], 0.0008288316582914573);
    assert_eq!(v["config"]["alpha"], 10);
    assert_eq!(v["config"]["gamma_prime"], 5e-3);
    assert_eq!(v["config"]["split"], "validation");
}

#[test]
fn select_n_not_converged_exits_zero_with_status() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fox_corpus(dir.path());
    let o = lmapprox(&[
        "select-n",
        "--generator",
        "builtin:uniform",
        "--corpus",
        corpus.to_str().unwrap(),
        "--n-max",
        "100",
        "--subset-size",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["status"], "not_converged");
    assert!(v["chosen_n"].is_null());
    assert_eq!(v["curve"]["points"].as_array().unwrap().len(), 9);
}

#[test]
fn curve_prints_csv_and_writes_json_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fox_corpus(dir.path());
    let out = dir.path().join("plan.json");
    let o = lmapprox(&["curve", "--generator", "builtin:markov:order=1:train=", "--corpus", corpus.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "empty train path is a usage error");

    let o = lmapprox(&[
        "curve",
        "--generator",
        "builtin:uniform",
        "--corpus",
        corpus.to_str().unwrap(),
        "--n-max",
        "200",
        "--subset-size",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let csv = stdout(&o);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,error"));
    let rows: Vec<(u64, f64)> = lines
        .map(|l| {
            let (n, e) = l.split_once(',').unwrap();
            (n.parse().unwrap(), e.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.first().map(|r| r.0), Some(20));
    assert_eq!(rows.last().map(|r| r.0), Some(200));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["curve"]["points"].as_array().unwrap().len(), rows.len());
    assert_eq!(v["config"]["gamma_prime"], 1e-3);
}

#[test]
fn deterministic_generator_chooses_two_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("a.txt");
    std::fs::write(&corpus, "a".repeat(2000)).unwrap();
    let train = format!("builtin:markov:order=1:train={}:pseudo=0", corpus.display());
    let o = lmapprox(&["select-n", "--generator", &train, "--corpus", corpus.to_str().unwrap(), "--subset-size", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["chosen_n"], 20);
    assert!(v["curve"]["points"].as_array().unwrap().iter().all(|p| p["error"] == 0.0));
}
