use std::path::Path;
use std::process::{Command, Output};

fn otdkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otdkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = otdkit(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: [&str; 5] = ["--", "--city.n_passengers", "40", "--city.n_days=5", "--corruption.loss_rate=0.02"];

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL).collect()
}

#[test]
fn stages_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &with_small(&["synth", "--out", "s"]));
    for f in ["stops.csv", "routes.csv", "swipes.csv", "avl.csv", "schedule.csv", "truth.jsonl"] {
        assert!(d.join("s").join(f).exists(), "{f}");
    }
    let out = ok(d, &["sync", "--net", "s", "--swipes", "s/swipes.csv", "--avl", "s/avl.csv", "--epsilon", "40", "--eta", "0.5"]);
    assert!(out.contains("swipes matched"));
    ok(d, &["repair", "--net", "s", "--matched", "matched.csv", "--avl", "s/avl.csv", "--condition", "theta2", "--min-support", "5"]);
    ok(d, &["journeys", "--net", "s", "--matched", "matched_repaired.csv", "--avl", "avl_repaired.csv"]);
    ok(d, &["chains", "--net", "s", "--journeys", "journeys.jsonl", "--window-days", "90", "--closure", "500"]);
    ok(d, &["fit-choice", "--net", "s", "--journeys", "journeys.jsonl", "--chains", "chains.jsonl", "--min-swipes", "8"]);
    ok(d, &["redistribute", "--net", "s", "--models", "models.jsonl", "--journeys", "journeys.jsonl", "--chains", "chains.jsonl", "--out", "b.csv", "a.csv"]);
    assert!(d.join("a.csv").exists() && d.join("b.csv").exists());
    let out = ok(
        d,
        &[
            "optimize", "--net", "s", "--models", "models.jsonl", "--journeys", "journeys.jsonl", "--chains", "chains.jsonl",
            "--objective", "Rt", "--swarm", "6", "--iters", "5", "--seed", "3", "--", "--design.ridership_floor", "0",
        ],
    );
    assert!(out.contains("headway"));
    let design: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("design.json")).unwrap()).unwrap();
    assert!(design["config"].as_str().unwrap().len() == 64);
    assert!(std::fs::read_to_string(d.join("audit.jsonl")).unwrap().starts_with("{\"tool\":"));
}

#[test]
fn pipeline_is_deterministic_and_report_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("run.conf"), "# small run\ncity.n_passengers = 40\ncity.n_days = 5\n").unwrap();
    ok(d, &["--threads", "1", "pipeline", "--config", "run.conf", "--out", "a"]);
    ok(d, &["pipeline", "--config", "run.conf", "--out", "b"]);
    let a = std::fs::read_to_string(d.join("a/manifest.json")).unwrap();
    let b = std::fs::read_to_string(d.join("b/manifest.json")).unwrap();
    assert_eq!(a, b);
    ok(d, &["pipeline", "--input", "a/input", "--config", "run.conf", "--out", "c"]);
    assert_eq!(std::fs::read(d.join("c/journeys.jsonl")).unwrap(), std::fs::read(d.join("a/journeys.jsonl")).unwrap());
    ok(d, &["report", "--run", "a", "--out", "rep"]);
    assert!(d.join("rep/hourly.csv").exists());
}

#[test]
fn config_errors_and_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let text = ok(d, &["config", "--", "--sync.epsilon", "30"]);
    assert!(text.contains("sync.epsilon = 30"));
    let bad = otdkit(d, &["config", "--", "--sync.nope", "1"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown config key"));
    let bad = otdkit(d, &["config", "--", "--sync.eta", "2"]);
    assert!(!bad.status.success());
    let bad = otdkit(d, &["replicate", "nope"]);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("sparsity-sweep"));
    let out = ok(d, &["replicate", "four-objectives", "--out", "rep"]);
    assert!(out.contains("\"objectives\": 4"));
    assert!(d.join("rep/four-objectives.csv").exists());
}

#[test]
fn empty_swipes_is_a_vacuous_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &with_small(&["synth", "--out", "s"]));
    let header: String = std::fs::read_to_string(d.join("s/swipes.csv")).unwrap().lines().take(2).map(|l| format!("{l}\n")).collect();
    std::fs::write(d.join("s/swipes.csv"), header).unwrap();
    ok(d, &["pipeline", "--input", "s", "--out", "run"]);
    let trips = std::fs::read_to_string(d.join("run/trips.jsonl")).unwrap();
    assert_eq!(trips.lines().count(), 1);
}

#[test]
fn schema_errors_fail_fast() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &with_small(&["synth", "--out", "s"]));
    let mut text = std::fs::read_to_string(d.join("s/avl.csv")).unwrap();
    text.push_str("V,R,not-a-number\n");
    std::fs::write(d.join("s/avl.csv"), text).unwrap();
    let bad = otdkit(d, &["pipeline", "--input", "s", "--out", "run"]);
    assert!(!bad.status.success());
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("avl.csv") && err.contains("row"), "{err}");
}
