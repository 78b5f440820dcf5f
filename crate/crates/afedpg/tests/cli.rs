use std::path::Path;
use std::process::{Command, Output};

use afedpg::output::LOG_COLUMNS;

fn afedpg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afedpg"))
        .args(args)
        .current_dir(cwd)
        .env_remove("AFEDPG_OUT")
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn bandit_run_writes_log_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = afedpg(&["run", "--config", "bundled:bandit_single", "--out", out.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", text(&o.stderr));
    let stdout = text(&o.stdout);
    assert!(stdout.contains("final gap"), "{stdout}");
    assert!(stdout.contains("mean delay"), "{stdout}");
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["optimal_return"], 1.0);
    assert_eq!(summary["config"]["mode"], "single");
    assert_eq!(summary["config"]["horizon"], 1);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    let log = std::fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), LOG_COLUMNS.join(","));
    assert_eq!(log.lines().count(), 201);
}

#[test]
fn same_config_twice_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in ["bundled:chain_async", "bundled:chain_sync", "bundled:bandit_single"] {
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        for d in [&a, &b] {
            let o = afedpg(&["run", "--config", cfg, "--out", d.to_str().unwrap()], dir.path());
            assert!(o.status.success(), "{}", text(&o.stderr));
        }
        assert_eq!(std::fs::read(a.join("log.csv")).unwrap(), std::fs::read(b.join("log.csv")).unwrap(), "{cfg}");
        assert_eq!(std::fs::read(a.join("summary.json")).unwrap(), std::fs::read(b.join("summary.json")).unwrap());
    }
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    afedpg(&["run", "--config", "bundled:chain_async", "--out", a.to_str().unwrap()], dir.path());
    afedpg(&["run", "--config", "bundled:chain_async", "--seed", "9", "--out", b.to_str().unwrap()], dir.path());
    assert_ne!(std::fs::read(a.join("log.csv")).unwrap(), std::fs::read(b.join("log.csv")).unwrap());
}

#[test]
fn zero_agents_is_a_config_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        "{\n  \"env\": { \"kind\": \"bandit\", \"rewards\": [1.0, 0.0] },\n  \"num_agents\": 0,\n  \"iterations\": 10\n}\n",
    )
    .unwrap();
    let o = afedpg(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = text(&o.stderr);
    assert!(err.contains("bad.json:3:3") && err.contains("num_agents"), "{err}");
}

#[test]
fn malformed_json_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"env\": { \"kind\": \"moon\" },\n  \"num_agents\": 1,\n  \"iterations\": 10\n}\n").unwrap();
    let o = afedpg(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("bad.json:2:"), "{}", text(&o.stderr));
}

#[test]
fn default_output_root_comes_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_afedpg"))
        .args(["run", "--config", "bundled:bandit_single"])
        .current_dir(dir.path())
        .env("AFEDPG_OUT", dir.path().join("root"))
        .output()
        .unwrap();
    assert!(o.status.success());
    let runs: Vec<_> = std::fs::read_dir(dir.path().join("root")).unwrap().collect();
    assert_eq!(runs.len(), 1);
}

#[test]
fn unknown_scope_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = afedpg(&["check", "everything"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn default_check_scope_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = afedpg(&["check", "--out", dir.path().to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stdout));
    let reports: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("checks.json")).unwrap()).unwrap();
    assert!(reports.as_array().unwrap().len() >= 9);
}

#[test]
fn check_of_one_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = afedpg(&["check", "--config", "bundled:random_lognormal"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stdout));
    assert!(text(&o.stdout).contains("ascent"));
}

#[test]
fn agent_sweep_has_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("base.json");
    std::fs::write(
        &cfg,
        r#"{"env": {"kind": "bandit", "rewards": [1.0, 0.0]}, "num_agents": 1, "iterations": 400,
            "schedules": {"eta0": 0.5}}"#,
    )
    .unwrap();
    let out = dir.path().join("sweep");
    let o = afedpg(
        &["sweep", "--config", cfg.to_str().unwrap(), "--axis", "agents", "--values", "1,2,4,8", "--seeds", "10", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let h = r.headers().unwrap().clone();
    let seeds = h.iter().position(|c| c == "seeds").unwrap();
    assert!(rows.iter().all(|row| &row[seeds] == "10"));
    let runs = csv::Reader::from_path(out.join("runs.csv")).unwrap().records().count();
    assert_eq!(runs, 40);
}

#[test]
fn ratio_sweep_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = afedpg(
        &["sweep", "--config", "bundled:straggler", "--axis", "ratio", "--values", "1,2,3,4,5,6,7,8", "--seeds", "2", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (value, measured, predicted) = (col("value"), col("speedup_mean"), col("predicted_speedup"));
    let mut n = 0;
    for row in r.records().map(Result::unwrap) {
        let ratio: f64 = row[value].parse().unwrap();
        let m: f64 = row[measured].parse().unwrap();
        let p: f64 = row[predicted].parse().unwrap();
        assert!((p - (3.0 * ratio + 1.0) / 4.0).abs() < 1e-12);
        assert!((m / p - 1.0).abs() < 0.02, "r = {ratio}: {m} vs {p}");
        n += 1;
    }
    assert_eq!(n, 8);
}

#[test]
fn variant_sweep_pairs_the_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = afedpg(
        &["sweep", "--config", "bundled:chain_async", "--axis", "variant", "--seeds", "3", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    let rows: Vec<csv::StringRecord> =
        csv::Reader::from_path(out.join("sweep.csv")).unwrap().records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][1], "server_anchor");
    assert_eq!(&rows[1][1], "agent_anchor");
    let mut runs = csv::Reader::from_path(out.join("runs.csv")).unwrap();
    let seeds: Vec<String> = runs.records().map(|r| r.unwrap()[1].to_string()).collect();
    assert_eq!(seeds[..3], seeds[3..]);
}

#[test]
fn sweep_axis_needs_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = afedpg(&["sweep", "--config", "bundled:chain_async", "--axis", "agents"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
