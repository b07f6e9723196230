mod common;

use std::fs;

use common::{bsmp, differing_files, read_json, run_into, verdict, write_config};
use tempfile::tempdir;

const SMALL_LQ: &str = r#"{"model": {"key": "lq"}, "steps": 10, "paths": 600, "seed": 3}"#;

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_model_exits_one_with_a_parsable_reason() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"model": {"key": "quartic"}}"#);
    let o = bsmp(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("bsmp-error: unknown_model: "), "{err}");
}

#[test]
fn malformed_or_invalid_configs_exit_one() {
    let dir = tempdir().unwrap();
    for (i, text) in [
        "{not json",
        r#"{"model": {"key": "lq"}, "steps": 0}"#,
        r#"{"model": {"key": "lq"}, "theta_grid": [0.0]}"#,
        r#"{"model": {"key": "nonlinear"}, "control": {"kind": "oracle"}}"#,
        r#"{"model": {"key": "lq"}, "control": {"kind": "constant", "value": [5.0]}}"#,
    ]
    .iter()
    .enumerate()
    {
        let cfg = write_config(dir.path(), &format!("c{i}.json"), text);
        let o = bsmp(&[
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(1), "{text}");
        assert!(
            stderr(&o).starts_with("bsmp-error: config: "),
            "{text}: {}",
            stderr(&o)
        );
    }
    let o = bsmp(&[
        "solve",
        "--config",
        dir.path().join("missing.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("bsmp-error: config: "));
}

#[test]
fn bad_arguments_exit_one() {
    let o = bsmp(&["integrate", "--config", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).starts_with("bsmp-error: usage: "),
        "{}",
        stderr(&o)
    );
    let o = bsmp(&["solve"]);
    assert_eq!(o.status.code(), Some(1));
    let o = bsmp(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn failing_verdict_exits_two() {
    let dir = tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"key": "lq"}, "steps": 10, "paths": 600,
            "optimizer": {"max_iters": 2, "tolerance": 1e-12}}"#,
    );
    let out = dir.path().join("o");
    let o = bsmp(&[
        "optimize",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("bsmp-verdict-failed: optimizer_converged"),
        "{}",
        stderr(&o)
    );
    let summary = read_json(&out.join("summary.json"));
    assert!(!verdict(&summary, "optimizer_converged").unwrap().2);
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
}

#[test]
fn solve_writes_the_documented_files() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_LQ);
    let out = dir.path().join("o");
    assert_eq!(run_into("solve", &cfg, &out, &["--threads", "1"]), 0);
    for f in [
        "resolved_config.json",
        "summary.json",
        "checks.csv",
        "run.log",
        "trajectories.csv",
        "moments.csv",
        "adjoint.csv",
        "norms.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let summary = read_json(&out.join("summary.json"));
    for key in [
        "config_hash",
        "model",
        "J",
        "J_stderr",
        "residual",
        "verdicts",
        "runtime_seconds",
    ] {
        assert!(summary.get(key).is_some(), "{key}");
    }
    assert_eq!(summary["model"], "lq");
    assert!(summary["runtime_seconds"].is_null());
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);

    let traj = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(lines.next().unwrap(), "path,step,t,w1,y1,z1_1,u1");
    assert_eq!(traj.lines().count(), 1 + 20 * 11);
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mantissa = row[4].split('e').next().unwrap().trim_start_matches('-');
    assert_eq!(mantissa.len(), 18, "17 significant digits: {}", row[4]);

    let resolved = read_json(&out.join("resolved_config.json"));
    assert_eq!(resolved["model"]["params"]["kappa"], 0.5);
    assert!(resolved.get("output_dir").is_none());
}

#[test]
fn seed_flag_overrides_the_file() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_LQ);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_into("cost", &cfg, &a, &[]), 0);
    assert_eq!(run_into("cost", &cfg, &b, &["--seed", "99"]), 0);
    let (ra, rb) = (
        read_json(&a.join("resolved_config.json")),
        read_json(&b.join("resolved_config.json")),
    );
    assert_eq!(ra["seed"], 3);
    assert_eq!(rb["seed"], 99);
    assert_eq!(rb["validation_seed"], 100);
    let (sa, sb) = (
        read_json(&a.join("summary.json")),
        read_json(&b.join("summary.json")),
    );
    assert_ne!(sa["config_hash"], sb["config_hash"]);
    assert_ne!(sa["J"], sb["J"]);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_LQ);
    let runs = [("a", "1"), ("b", "1"), ("c", "3")];
    for (name, threads) in runs {
        assert_eq!(
            run_into(
                "solve",
                &cfg,
                &dir.path().join(name),
                &["--threads", threads]
            ),
            0
        );
    }
    assert!(differing_files(&dir.path().join("a"), &dir.path().join("b")).is_empty());
    assert!(differing_files(&dir.path().join("a"), &dir.path().join("c")).is_empty());
    let log = fs::read_to_string(dir.path().join("c/run.log")).unwrap();
    assert!(log.contains("threads 3"));
}

#[test]
fn cost_reports_both_estimators() {
    let dir = tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"key": "nonlinear"}, "steps": 10, "paths": 600,
            "control": {"kind": "sin_w", "amplitude": 0.8, "frequency": 2.0}}"#,
    );
    let out = dir.path().join("o");
    assert_eq!(run_into("cost", &cfg, &out, &[]), 0);
    let cost = read_json(&out.join("cost.json"));
    assert_eq!(cost["direct"]["method"], "direct");
    assert_eq!(cost["augmented"]["method"], "augmented");
    assert!(
        verdict(&read_json(&out.join("summary.json")), "cost_duality")
            .unwrap()
            .2
    );
}
