use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cgpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgpo")).args(args).output().unwrap()
}

fn stderr_record(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not a JSON record ({e}): {text}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SHORT: [&str; 4] = ["--set", "run.total_iterations=120", "--set", "run.checkpoint_every=60"];

#[test]
fn simulate_writes_artifacts_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["simulate", "--out", p(&out), "--seed", "3"];
    args.extend(SHORT);
    let res = cgpo(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["metrics.jsonl", "checkpoint.json", "checkpoint-000060.json", "summary.json", "config.toml"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["iterations"], 120);
    assert_eq!(summary["tier_peaks"].as_array().unwrap().len(), 3);
    assert_eq!(summary["tier_occupancy"][0][1], serde_json::json!([160, 160, 160]));
    // the saved config reproduces the run
    let again = dir.path().join("again");
    let res = cgpo(&["simulate", "--config", p(&out.join("config.toml")), "--out", p(&again)]);
    assert!(res.status.success());
    assert_eq!(fs::read(out.join("metrics.jsonl")).unwrap(), fs::read(again.join("metrics.jsonl")).unwrap());
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let mut args = vec!["simulate", "--out", p(&full)];
    args.extend(SHORT);
    assert!(cgpo(&args).status.success());

    let resumed = dir.path().join("resumed");
    fs::create_dir(&resumed).unwrap();
    fs::copy(full.join("metrics.jsonl"), resumed.join("metrics.jsonl")).unwrap();
    let ckpt = full.join("checkpoint-000060.json");
    let mut args = vec!["simulate", "--out", p(&resumed), "--resume", p(&ckpt)];
    args.extend(SHORT);
    let res = cgpo(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["metrics.jsonl", "checkpoint.json"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(resumed.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn config_errors_exit_with_one_and_a_json_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let res = cgpo(&["simulate", "--out", p(&out), "--set", "sampler.no_such_key=1"]);
    assert_eq!(res.status.code(), Some(1));
    let rec = stderr_record(&res);
    assert_eq!(rec["error"], "unknown_key");
    assert!(rec["message"].as_str().unwrap().contains("no_such_key"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[run]\ntotal_iterations = \"many\"\n").unwrap();
    let res = cgpo(&["simulate", "--config", p(&bad), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(1));
    stderr_record(&res);

    let res = cgpo(&["simulate", "--out", p(&out), "--resume", p(&dir.path().join("missing.json"))]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.join("metrics.jsonl").exists());
}

#[test]
fn usage_errors_exit_with_one_and_help_with_zero() {
    assert_eq!(cgpo(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cgpo(&["simulate"]).status.code(), Some(1));
    let help = cgpo(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["simulate", "sweep", "calibrate", "inspect", "export"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // output "directory" is an existing file
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let mut args = vec!["simulate", "--out", p(&blocker)];
    args.extend(SHORT);
    let res = cgpo(&args);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(stderr_record(&res)["exit_code"], 2);
}

#[test]
fn calibrate_prints_weights_that_sum_to_c_plus_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let rewards = dir.path().join("r.txt");
    fs::write(&rewards, "0.2, 0.8\n0.5\n").unwrap();
    let res = cgpo(&["calibrate", "--rewards", p(&rewards), "--lambda", "4"]);
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    // v = (1/r) / sum(1/r) with 1/r = 5, 1.25, 2
    let inv = [5.0, 1.25, 2.0];
    let total: f64 = inv.iter().sum();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .take(3)
        .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
        .collect();
    for (i, row) in rows.iter().enumerate() {
        let v = inv[i] / total;
        assert!((row[2] - v).abs() < 1e-6);
        assert!((row[3] - (1.0 + 4.0 * v) / 7.0).abs() < 1e-6);
        assert!((row[4] - (1.0 + 4.0 * v)).abs() < 1e-6);
    }
    assert!(text.contains("sum w = 7.000000000000"), "{text}");

    let json = dir.path().join("r.json");
    fs::write(&json, "[0.5, \"x\"]").unwrap();
    assert_eq!(cgpo(&["calibrate", "--rewards", p(&json)]).status.code(), Some(1));
}

#[test]
fn inspect_and_export_read_run_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["simulate", "--out", p(&out)];
    args.extend(SHORT);
    assert!(cgpo(&args).status.success());

    let res = cgpo(&["inspect", p(&out.join("checkpoint.json")), "--top", "4"]);
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("checkpoint at iteration 120 (480 prompts"));
    assert!(text.contains("top 4 by p_list") && text.contains("bottom 4 by p_list"));

    let csv = dir.path().join("curve.csv");
    let res = cgpo(&["export", p(&out.join("metrics.jsonl")), "--kind", "reward-curve", "--out", p(&csv)]);
    assert!(res.status.success());
    let body = fs::read_to_string(&csv).unwrap();
    assert!(body.starts_with("iter,reward_avg,reward_std_mean"));
    assert_eq!(body.lines().count(), 1 + 121);

    let res = cgpo(&["export", p(&out.join("metrics.jsonl")), "--kind", "tier-occupancy"]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).starts_with("iter,tier1,tier2,tier3\n0,160,160,160\n"));

    let res = cgpo(&["export", p(&out.join("metrics.jsonl")), "--kind", "histogram"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn sweep_runs_every_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let res = cgpo(&[
        "sweep",
        "--out",
        p(&out),
        "--grid",
        "run.seed=0,1,2",
        "--set",
        "run.total_iterations=30",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let points: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(points.len(), 3);
    let mut hashes = std::collections::BTreeSet::new();
    for i in 0..3 {
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(format!("{i:02}-{i}/summary.json"))).unwrap()).unwrap();
        assert_eq!(summary["seed"], i);
        assert_eq!(summary["final_eval_reward"], points[i as usize]["final_eval_reward"]);
        hashes.insert(summary["config_hash"].as_str().unwrap().to_owned());
    }
    assert_eq!(hashes.len(), 3);

    let res = cgpo(&["sweep", "--out", p(&out), "--grid", "run.seed"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn strategy_override_is_reflected_in_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("u");
    let res = cgpo(&["simulate", "--out", p(&out), "--set", "strategy.kind=uniform", "--set", "run.total_iterations=20"]);
    assert!(res.status.success());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["strategy"], "uniform");
}

#[test]
fn lambda_sweep_reports_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/ablation.toml");
    let res = cgpo(&[
        "sweep",
        "--config",
        config,
        "--out",
        p(dir.path()),
        "--grid",
        "calibration.lambda=5,8,10,12,15",
        "--set",
        "run.total_iterations=20",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8_lossy(&res.stdout);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    for (row, lambda) in rows.iter().zip(["5", "8", "10", "12", "15"]) {
        assert_eq!(row.split_whitespace().next(), Some(lambda));
    }
}
