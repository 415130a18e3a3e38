use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dopt_lab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dopt-lab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn verify_default_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dopt_lab(&["verify", "--instances", "50", "--seed", "1", "--out", "report.json"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["all_passed"], true);
    assert!(report["checks"]["gap_vs_on_policy"]["max_residual"].as_f64().unwrap() < 1e-9);
}

#[test]
fn verify_with_flipped_delta_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dopt_lab(&["verify", "--instances", "5", "--mutation", "flip-delta-sign"], dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dopt_lab(&["compare", "--config", "missing.cfg", "--out", "o"], dir.path());
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing.cfg") && err.contains("No such file"), "{err}");
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dopt_lab(&["frobnicate"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&dopt_lab(&["verify", "--bogus"], dir.path())), 1);
    assert_eq!(code(&dopt_lab(&["--help"], dir.path())), 0);
}

#[test]
fn oversized_exact_truth_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("big.toml"),
        "seed = 1\n[environment]\nkind = \"gridworld\"\nn = 400\nreward_seed = 1\npolicy_seed = 2\n\
         [targets]\nkind = \"random\"\ncount = 1\n[protocol]\nruns = 1\nepisodes = 1\n",
    )
    .unwrap();
    let out = dopt_lab(&["compare", "--config", "big.toml", "--out", "o"], dir.path());
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn build_log_learn_solve_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let out = dopt_lab(args, d);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    run(&["env", "build", "--grid", "3", "--policies", "2", "--seed", "5", "--out", "env"]);
    run(&["env", "log", "--mdp", "env/mdp.json", "--episodes", "300", "--out", "log.jsonl"]);
    assert_eq!(fs::read_to_string(d.join("log.jsonl")).unwrap().lines().count(), 900);

    run(&["learn", "--dataset", "log.jsonl", "--target", "env/policy_0.json", "--out", "artifacts"]);
    for f in ["mu_hat_star.json", "b_hat_star.json", "diagnostics.json"] {
        assert!(d.join("artifacts").join(f).is_file(), "{f}");
    }
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("artifacts/diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["tuples"], 900);

    run(&["solve", "--mdp", "env/mdp.json", "--target", "env/policy_0.json", "--out", "exact"]);
    let out = run(&[
        "evaluate",
        "--mdp",
        "env/mdp.json",
        "--target",
        "env/policy_0.json",
        "--estimator",
        "baseline",
        "--behavior",
        "artifacts/mu_hat_star.json",
        "--baseline",
        "artifacts/b_hat_star.json",
        "--episodes",
        "50",
        "--out",
        "run.csv",
    ]);
    assert!(out.stdout.is_empty());
    let csv = fs::read_to_string(d.join("run.csv")).unwrap();
    assert!(csv.starts_with("episode_index,estimate,running_mean,running_abs_error_vs_truth\n"));
    assert_eq!(csv.lines().count(), 51);

    let dump = run(&["dump", "--mdp", "env/mdp.json", "--target", "env/policy_1.json"]);
    let tables: serde_json::Value = serde_json::from_slice(&dump.stdout).unwrap();
    assert!(tables["value_tables"]["q"]["data"].is_array());
}

#[test]
fn bad_dataset_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&dopt_lab(&["env", "build", "--random", "2,2,2", "--policies", "1", "--out", "env"], d)), 0);
    fs::write(
        d.join("bad.jsonl"),
        "{\"t\":0,\"s\":0,\"a\":0,\"r\":0.5,\"s_next\":1}\n{\"t\":0,\"s\":7,\"a\":0,\"r\":0.5,\"s_next\":1}\n",
    )
    .unwrap();
    let out = dopt_lab(&["learn", "--dataset", "bad.jsonl", "--target", "env/policy_0.json", "--out", "a"], d);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn compare_outputs_are_normalized() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("small.toml"),
        "seed = 9\n[environment]\nkind = \"gridworld\"\nn = 3\nreward_seed = 1\npolicy_seed = 2\n\
         [targets]\nkind = \"random\"\ncount = 3\n[protocol]\nruns = 4\nepisodes = 50\noffline_episodes = 100\n",
    )
    .unwrap();
    let out = dopt_lab(&["compare", "--config", "small.toml", "--out", "res"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let res = dir.path().join("res");
    for m in ["on_policy_mc", "odi", "dr", "dopt"] {
        let csv = fs::read_to_string(res.join(format!("{m}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("episode,mean_rel_error,stderr"));
        assert_eq!(lines.count(), 50);
    }
    let mc = fs::read_to_string(res.join("on_policy_mc.csv")).unwrap();
    assert!(mc.lines().nth(1).unwrap().starts_with("1,1,"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(res.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 9);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(res.join("summary.json").is_file());
}
