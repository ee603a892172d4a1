//! Shared helpers for the CLI test suites.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dpfair")
}

pub fn run_cli(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn dpfair")
}

pub fn run_cli_ok(args: &[&str]) -> String {
    let out = run_cli(args);
    assert!(
        out.status.success(),
        "dpfair {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Parse a `key,group,value` report into a map keyed by (key, group).
pub fn parse_report(path: &Path) -> BTreeMap<(String, String), String> {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    let mut out = BTreeMap::new();
    for line in text.lines().skip(1) {
        let mut parts = line.splitn(3, ',');
        let key = parts.next().unwrap().to_string();
        let group = parts.next().unwrap().to_string();
        let value = parts.next().unwrap().to_string();
        out.insert((key, group), value);
    }
    out
}

pub fn report_f64(report: &BTreeMap<(String, String), String>, key: &str, group: &str) -> f64 {
    report
        .get(&(key.to_string(), group.to_string()))
        .unwrap_or_else(|| panic!("report missing {key}/{group}"))
        .parse()
        .unwrap_or_else(|_| panic!("report {key}/{group} is not a number"))
}

/// Rows of trace.csv: (epoch, arm, group, accuracy, grad_norm).
pub fn parse_trace(path: &Path) -> Vec<(u64, String, String, Option<f64>, Option<f64>)> {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    text.lines()
        .skip(1)
        .map(|line| {
            let parts: Vec<&str> = line.split(',').collect();
            assert_eq!(parts.len(), 5, "bad trace row: {line}");
            (
                parts[0].parse().unwrap(),
                parts[1].to_string(),
                parts[2].to_string(),
                (!parts[3].is_empty()).then(|| parts[3].parse().unwrap()),
                (!parts[4].is_empty()).then(|| parts[4].parse().unwrap()),
            )
        })
        .collect()
}

pub fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

/// A fast, separable synthetic config for functional tests.
pub fn tiny_config(out: &Path) -> String {
    format!(
        "out = {}\n\
         seed = 7\n\
         data.classes = 3\n\
         data.per_class = 60\n\
         data.test_per_class = 30\n\
         data.input_dim = 12\n\
         data.separation = 5.0\n\
         model.hidden = 16\n\
         dp.mode = clip_and_noise\n\
         dp.clip = 1.0\n\
         dp.noise_multiplier = 0.8\n\
         train.batch = 15\n\
         train.epochs = 4\n\
         train.lr = 0.1\n",
        out.display()
    )
}
