use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn junta_probe(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_junta-probe"));
    cmd.args(args);
    // keep ambient overrides from leaking into the runs
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("JUNTA_PROBE_")) {
        cmd.env_remove(k);
    }
    cmd.envs(env.iter().copied());
    cmd.output().expect("binary runs")
}

fn stdout_report(o: &Output) -> Value {
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

fn read_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const QUICK_TEST: &[&str] = &["test", "--function", "constant:1", "--dim", "3", "--entry-samples", "100"];

#[test]
fn test_on_a_constant_prints_one_json_line_and_says_yes() {
    let o = junta_probe(QUICK_TEST, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_report(&o);
    assert_eq!(r["payload"]["verdict"], "yes");
    assert_eq!(r["command"], "test");
    assert!(r["ledger"]["queries"].as_u64().unwrap() > 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("verdict yes"));
}

#[test]
fn a_no_verdict_still_exits_zero() {
    let o = junta_probe(&["test", "--function", "parity:0,1,2", "--dim", "4", "--k", "1", "--s", "4", "--entry-samples", "2000", "--no-gate"], &[]);
    assert!(o.status.success());
    assert_eq!(stdout_report(&o)["payload"]["verdict"], "no");
}

#[test]
fn out_appends_jsonl_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs.jsonl");
    let out_s = out.to_str().unwrap();
    for _ in 0..2 {
        let o = junta_probe(&["learn", "--function", "rotated-halfspace:0", "--dim", "3", "--s", "2", "--hypotheses", "thresholds:20", "--fresh", "50", "--seed", "7", "--out", out_s], &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stdout.is_empty());
    }
    let lines = read_lines(&out);
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["payload"], lines[1]["payload"]);
    assert_eq!(lines[0]["seed"], 7);
}

#[test]
fn flags_beat_environment_beat_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("probe.conf");
    std::fs::write(&cfg, "# quick run\nfunction = constant:1\ndim = 3\nentry-samples = 100\nk = 3\nseed = 5\neps = 0.3\n").unwrap();
    let c = cfg.to_str().unwrap();
    let o = junta_probe(&["test", "--config", c], &[]);
    let r = stdout_report(&o);
    assert_eq!((r["config"]["k"].as_u64(), r["seed"].as_u64()), (Some(3), Some(5)));
    let o = junta_probe(&["test", "--config", c], &[("JUNTA_PROBE_K", "2"), ("JUNTA_PROBE_ENTRY_SAMPLES", "50")]);
    let r = stdout_report(&o);
    assert_eq!(r["config"]["k"], 2);
    assert_eq!(r["config"]["entry_samples"], 50);
    let o = junta_probe(&["test", "--config", c, "--k", "1"], &[("JUNTA_PROBE_K", "2")]);
    let r = stdout_report(&o);
    assert_eq!(r["config"]["k"], 1);
    assert_eq!(r["config"]["epsilon"], 0.3);
}

#[test]
fn usage_errors_exit_two_and_name_the_field() {
    for (args, field) in [
        (vec!["test", "--function", "constant:1", "--dim", "3", "--eps", "2"], "eps"),
        (vec!["test", "--function", "constant:1", "--dim", "3", "--k", "two"], "k"),
        (vec!["learn", "--dim", "3"], "function"),
        (vec!["test", "--function", "halfspace:0"], "dim"),
        (vec!["lowerbound", "--design", "grid:5x5", "--trials", "10"], "20"),
    ] {
        let o = junta_probe(&args, &[]);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(field), "{args:?}: {err}");
    }
    let o = junta_probe(&["test", "--config", "/nonexistent/probe.conf"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = junta_probe(&["frobnicate"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn budget_overrun_exits_three_with_a_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.jsonl");
    let o = junta_probe(&["test", "--function", "halfspace:0", "--dim", "5", "--max-queries", "10", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));
    let r = &read_lines(&out)[0];
    assert_eq!(r["status"], "budget_exceeded");
    assert!(r["ledger"]["queries"].as_u64().unwrap() <= 10);
}

#[test]
fn failures_inside_a_run_exit_one() {
    // an unwritable output path is an I/O failure, not a usage error
    let o = junta_probe(&[QUICK_TEST, &["--out", "/nonexistent/dir/r.jsonl"]].concat(), &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn lowerbound_writes_csv_and_optional_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("lb.csv");
    let rep = dir.path().join("lb.jsonl");
    let o = junta_probe(
        &["lowerbound", "--s", "100,1000", "--design", "grid:3x3", "--trials", "2000", "--seed", "1", "--out", csv.to_str().unwrap(), "--report", rep.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "s,n,tv,tv_ci,eventA_fail_rate");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("100,9,"));
    assert!(lines[2].starts_with("1000,9,"));
    let r = &read_lines(&rep)[0];
    assert_eq!(r["payload"]["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn bench_reports_a_table_per_quantity() {
    let o = junta_probe(&["bench-estimators", "--function", "halfspace:1", "--dim", "4", "--eps", "0.2"], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_report(&o);
    let rows = r["payload"]["bench"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    let mean = rows.iter().find(|row| row["quantity"] == "mean").unwrap();
    assert!((mean["target"].as_f64().unwrap() + 0.6827).abs() < 1e-4);
}

#[test]
fn help_lists_every_subcommand() {
    let o = junta_probe(&["--help"], &[]);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["test", "learn", "structure-test", "lowerbound", "bench-estimators"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}
