use std::path::Path;
use std::process::{Command, Output};

fn dcpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcpf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("DCPF_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dcpf(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(dcpf(&["dataset", "--case", "case14", "--n", "0", "--out", "x.ds"]).status.code(), Some(2));
    assert_eq!(dcpf(&["dataset", "--case", "case14", "--n", "5", "--split", "1.0", "--out", "x.ds"]).status.code(), Some(2));
    assert_eq!(dcpf(&["--jobs", "0", "dataset", "--case", "case14", "--n", "5", "--out", "x.ds"]).status.code(), Some(2));
    assert_eq!(dcpf(&["train", "--case", "case14"]).status.code(), Some(2));
    assert_eq!(dcpf(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcpf(&["dataset", "--case", "no_such_case", "--n", "5", "--out", p(&dir.path().join("a.ds"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn dataset_is_reproducible_and_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ds"), dir.path().join("b.ds"));
    for path in [&a, &b] {
        ok(&["--jobs", "1", "dataset", "--case", "case14", "--n", "30", "--seed", "9", "--out", p(path)]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.ds.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert!(manifest["dataset_checksum"].is_string());

    // the dataset belongs to case14 and is refused for another case
    let out = dcpf(&["train", "--case", "case30", "--dataset", p(&a), "--out", p(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_evaluate_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.ds");
    let csv = dir.path().join("d.csv");
    ok(&["dataset", "--case", "case14", "--n", "200", "--seed", "4", "--out", p(&ds), "--csv", p(&csv)]);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("scenario_id,"));

    let run = dir.path().join("run");
    let stdout = ok(&["train", "--case", "case14", "--dataset", p(&ds), "--method", "bfgs", "--out", p(&run)]);
    assert!(stdout.starts_with("train loss"));
    for f in ["params.json", "report.json", "trajectory.csv", "params.json.manifest.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "BFGS");
    assert_eq!(report["initial_provenance"], "HOT");

    let cold_run = dir.path().join("cold");
    ok(&["train", "--case", "case14", "--dataset", p(&ds), "--init", "cold", "--max-iter", "5", "--out", p(&cold_run)]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cold_run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["termination"], "MAX_ITER");
    assert_eq!(report["iterations"], 5);

    let table = dir.path().join("eval.csv");
    let cdf = dir.path().join("cdf.csv");
    ok(&[
        "evaluate", "--case", "case14", "--dataset", p(&ds),
        "--params", p(&run.join("params.json")), "--out", p(&table), "--cdf", p(&cdf),
    ]);
    let text = std::fs::read_to_string(&table).unwrap();
    let labels: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["cold", "cold_r0", "hot", "run"]);
    assert!(std::fs::read_to_string(&cdf).unwrap().lines().count() > 1);

    let stats = dir.path().join("stats.json");
    let scatter = dir.path().join("scatter.csv");
    ok(&[
        "params-stats", "--case", "case14",
        "--params", p(&run.join("params.json")), "--params", p(&cold_run.join("params.json")),
        "--scatter", p(&scatter), "--out", p(&stats),
    ]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(std::fs::read_to_string(&scatter).unwrap().lines().count() > 20);
}

#[test]
fn contingency_study_on_small_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.ds");
    ok(&["dataset", "--case", "case14", "--n", "100", "--seed", "2", "--out", p(&ds)]);
    let run = dir.path().join("run");
    ok(&["train", "--case", "case14", "--dataset", p(&ds), "--out", p(&run)]);
    let out = dir.path().join("cont.csv");
    ok(&[
        "contingency", "--case", "case14", "--params", p(&run.join("params.json")),
        "--n-train", "40", "--n-test", "10", "--seed", "2", "--out", p(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 21);
    let row14 = text.lines().find(|l| l.starts_with("14,")).unwrap();
    assert!(row14.starts_with("14,true,"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json["results"].as_array().unwrap().len(), 20);
    assert!(json["gamma_note"].as_str().unwrap().contains("gamma"));
}
