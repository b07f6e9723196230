#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn bsmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsmp"))
        .args(args)
        .output()
        .expect("bsmp runs")
}

pub fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

/// Runs `command` with `config` into `out`; returns the exit code.
pub fn run_into(command: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![
        command,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = bsmp(&args);
    o.status.code().expect("exit code")
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Verdict `(value, threshold, pass)` by name from `summary.json`.
pub fn verdict(summary: &Value, name: &str) -> Option<(f64, f64, bool)> {
    summary["verdicts"]
        .as_array()?
        .iter()
        .find(|v| v["name"] == name)
        .map(|v| {
            (
                v["value"].as_f64().unwrap_or(f64::NAN),
                v["threshold"].as_f64().unwrap_or(f64::NAN),
                v["pass"].as_bool().unwrap(),
            )
        })
}

/// Names of files that differ between two output directories, ignoring `run.log`.
pub fn differing_files(a: &Path, b: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "run.log")
        .collect();
    names.sort();
    let mut diff: Vec<String> = names
        .iter()
        .filter(|n| fs::read(a.join(n)).unwrap() != fs::read(b.join(n)).unwrap_or_default())
        .cloned()
        .collect();
    let count_b = fs::read_dir(b)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() != "run.log")
        .count();
    if count_b != names.len() {
        diff.push("<file set>".into());
    }
    diff
}
