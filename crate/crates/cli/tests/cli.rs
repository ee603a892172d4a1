//! Functional tests of the command-line surface: exit codes, report
//! layout, determinism, sweep/train equivalence and the golden summary
//! schema.

mod common;

use common::*;
use std::path::Path;
use tempfile::tempdir;

#[test]
fn unknown_config_key_exits_2_with_machine_record() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.conf", "definitely.not.a.key = 1\n");
    let out = run_cli(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error kind=config code=2"), "stderr: {err}");
}

#[test]
fn missing_config_file_exits_2() {
    let out = run_cli(&["train", "--config", "/nonexistent/x.conf"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_idx_file_exits_3() {
    let dir = tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "idx.conf",
        &format!(
            "out = {}\ndata.source = idx\ndata.idx_images = /nope/img\ndata.idx_labels = /nope/lab\n\
             data.idx_test_images = /nope/timg\ndata.idx_test_labels = /nope/tlab\n",
            dir.path().display()
        ),
    );
    let out = run_cli(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error kind=data code=3"), "stderr: {err}");
}

#[test]
fn empty_sweep_block_is_config_error() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.conf", &tiny_config(dir.path()));
    let out = run_cli(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "sweep without a block");
}

#[test]
fn baseline_smoke_run_reaches_high_accuracy_everywhere() {
    let dir = tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let body = format!(
        "out = {}\nseed = 5\ndata.classes = 3\ndata.per_class = 200\ndata.test_per_class = 60\n\
         data.input_dim = 16\ndata.separation = 6.0\nmodel.hidden = 16\ndp.mode = baseline\n\
         train.batch = 20\ntrain.epochs = 5\ntrain.lr = 0.05\n",
        out_dir.display()
    );
    let cfg = write_config(dir.path(), "smoke.conf", &body);
    run_cli_ok(&["train", "--config", cfg.to_str().unwrap()]);
    let report = parse_report(&out_dir.join("train/report.csv"));
    for class in 0..3 {
        let acc = report_f64(&report, "accuracy_dp", &class.to_string());
        assert!(acc > 0.95, "class {class} accuracy {acc}");
    }
    assert_eq!(report.get(&("epsilon".into(), String::new())).unwrap(), "NA");
}

#[test]
fn identical_config_and_seed_reproduce_reports_byte_for_byte() {
    let dir = tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let cfg_a = write_config(dir.path(), "a.conf", &tiny_config(&out_a));
    let cfg_b = write_config(dir.path(), "b.conf", &tiny_config(&out_b));
    run_cli_ok(&["train", "--config", cfg_a.to_str().unwrap()]);
    run_cli_ok(&["train", "--config", cfg_b.to_str().unwrap()]);
    for name in ["trace.csv", "report.csv", "rdp.csv"] {
        let a = std::fs::read(out_a.join("train").join(name)).unwrap();
        let b = std::fs::read(out_b.join("train").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn rerun_from_resolved_config_reproduces_the_run() {
    let dir = tempdir().unwrap();
    let out_a = dir.path().join("a");
    let cfg = write_config(dir.path(), "a.conf", &tiny_config(&out_a));
    run_cli_ok(&["train", "--config", cfg.to_str().unwrap()]);
    // feed config.resolved back in, redirected to a fresh out dir
    let resolved = out_a.join("train/config.resolved");
    let out_b = dir.path().join("b");
    run_cli_ok(&[
        "train",
        "--config",
        resolved.to_str().unwrap(),
        "--set",
        &format!("out={}", out_b.display()),
    ]);
    for name in ["trace.csv", "report.csv", "rdp.csv"] {
        let a = std::fs::read(out_a.join("train").join(name)).unwrap();
        let b = std::fs::read(out_b.join("train").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs after resolved-config replay");
    }
}

#[test]
fn single_value_sweep_matches_plain_train() {
    let dir = tempdir().unwrap();
    let out_sweep = dir.path().join("s");
    let out_train = dir.path().join("t");
    let base = tiny_config(&out_sweep);
    let cfg_sweep = write_config(
        dir.path(),
        "sweep.conf",
        &format!("{base}sweep.train.epochs = 4\n"),
    );
    run_cli_ok(&["sweep", "--config", cfg_sweep.to_str().unwrap()]);
    let cfg_train = write_config(dir.path(), "train.conf", &tiny_config(&out_train));
    run_cli_ok(&["train", "--config", cfg_train.to_str().unwrap()]);
    let a = std::fs::read(out_sweep.join("sweep/train.epochs/4/report.csv")).unwrap();
    let b = std::fs::read(out_train.join("train/report.csv")).unwrap();
    assert_eq!(a, b, "sweep run diverged from direct train");
}

#[test]
fn sweep_summary_matches_golden_schema() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("out");
    let base = tiny_config(&out);
    let cfg = write_config(
        dir.path(),
        "sweep.conf",
        &format!("{base}sweep.dp.noise_multiplier = 0.8,1.6\n"),
    );
    run_cli_ok(&["sweep", "--config", cfg.to_str().unwrap()]);
    let got = std::fs::read_to_string(out.join("sweep/summary.csv")).unwrap();
    let golden = include_str!("golden/sweep_summary.csv");
    assert_eq!(got, golden, "sweep summary changed; diff against golden file");
}

#[test]
fn ablate_arms_share_initialization_and_count_four() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "a.conf", &tiny_config(&out));
    run_cli_ok(&["ablate", "--config", cfg.to_str().unwrap()]);
    let arms = ["baseline", "clip_only", "noise_only", "clip_and_noise"];
    let mut checksums = Vec::new();
    for arm in arms {
        let report = parse_report(&out.join("ablate").join(arm).join("report.csv"));
        checksums.push(report.get(&("init_checksum".into(), String::new())).unwrap().clone());
    }
    assert_eq!(checksums.len(), 4);
    assert!(checksums.iter().all(|c| c == &checksums[0]), "{checksums:?}");
}

#[test]
fn accountant_prints_expected_epsilon_for_reference_run() {
    let stdout = run_cli_ok(&[
        "accountant",
        "--n",
        "60000",
        "--batch",
        "256",
        "--noise-multiplier",
        "0.8",
        "--epochs",
        "60",
        "--delta",
        "1e-6",
    ]);
    let eps_line = stdout
        .lines()
        .find(|l| l.starts_with("epsilon = "))
        .expect("epsilon line");
    let eps: f64 = eps_line
        .split_whitespace()
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!((eps - 6.23).abs() <= 0.25, "{eps}");
    assert!(stdout.contains("<- best"));
}

#[test]
fn fed_writes_reports_and_r0_keeps_initial_accuracy_only() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("out");
    let body = format!(
        "out = {}\nseed = 3\ndata.classes = 2\ndata.per_class = 40\ndata.test_per_class = 20\n\
         data.input_dim = 6\ndata.separation = 4.0\nmodel.hidden = 8\n\
         fed.participants = 4\nfed.per_round = 2\nfed.rounds = 0\nfed.local_batch = 5\n",
        out.display()
    );
    let cfg = write_config(dir.path(), "fed.conf", &body);
    run_cli_ok(&["fed", "--config", cfg.to_str().unwrap()]);
    let trace = parse_trace(&out.join("fed/trace.csv"));
    assert!(trace.is_empty(), "no rounds -> no trace rows");
    let report = parse_report(&out.join("fed/report.csv"));
    // with zero rounds both arms are the untouched initial model
    for class in 0..2 {
        let b = report_f64(&report, "accuracy_baseline", &class.to_string());
        let d = report_f64(&report, "accuracy_dp", &class.to_string());
        assert_eq!(b, d);
    }
}

#[test]
fn fed_seed_reproducibility() {
    let dir = tempdir().unwrap();
    let mk = |tag: &str| {
        let out = dir.path().join(tag);
        let body = format!(
            "out = {}\nseed = 9\ndata.classes = 2\ndata.per_class = 60\ndata.test_per_class = 20\n\
             data.input_dim = 6\ndata.separation = 4.0\nmodel.hidden = 8\n\
             fed.participants = 5\nfed.per_round = 2\nfed.rounds = 4\nfed.local_batch = 8\n\
             fed.clip = 0.5\nfed.noise_multiplier = 1.0\n",
            out.display()
        );
        let cfg = write_config(dir.path(), &format!("{tag}.conf"), &body);
        run_cli_ok(&["fed", "--config", cfg.to_str().unwrap()]);
        out
    };
    let a = mk("a");
    let b = mk("b");
    for name in ["trace.csv", "report.csv", "rdp.csv"] {
        let fa = std::fs::read(a.join("fed").join(name)).unwrap();
        let fb = std::fs::read(b.join("fed").join(name)).unwrap();
        assert_eq!(fa, fb, "{name} differs across identical fed runs");
    }
    let _ = Path::new("unused");
}
