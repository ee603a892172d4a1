//! Report files. One directory per run:
//!
//! * `config.resolved` — the full key set that reproduces the run
//! * `trace.csv`       — `epoch,arm,group,accuracy,grad_norm`
//! * `report.csv`      — `key,group,value` final metrics
//! * `rdp.csv`         — `order,rdp,epsilon` accountant table (noisy runs)
//! * `meta.txt`        — wall-clock; the only file excluded from the
//!                        byte-identical determinism contract
//!
//! All floats use Rust's shortest round-trip formatting with a `.` decimal
//! point; no locale dependence anywhere.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dpfair::accountant::{to_epsilon, PrivacyCurve};
use dpfair::audit::{gradient_norm_summary, DisparityReport};
use dpfair::fed::FedTrace;
use dpfair::model::ParamVector;
use dpfair::optim::TrainTrace;

use crate::error::{CliError, CliResult};
use crate::run::ArmOutcome;

/// FNV-1a over the parameter bits; used to audit that arms share an
/// initialization.
pub fn checksum(params: &ParamVector) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in params.values().data() {
        for byte in v.to_bits().to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}

const NA: &str = "NA";

/// The pieces of a finished run that summaries reference.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub mode: &'static str,
    pub epsilon: Option<(f64, f64)>,
    pub disparity: DisparityReport,
    pub init_checksum: u64,
}

impl RunSummary {
    pub fn epsilon_text(&self) -> String {
        match self.epsilon {
            Some((e, _)) => format!("{e:.4}"),
            None => NA.to_string(),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::data(format!("create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::data(format!("write {}: {e}", path.display())))
}

fn trace_csv(arms: &[(&str, &TrainTrace)]) -> CliResult<String> {
    let mut out = String::from("epoch,arm,group,accuracy,grad_norm\n");
    for (arm, trace) in arms {
        let norms = if trace.steps.is_empty() {
            Vec::new()
        } else {
            gradient_norm_summary(trace).map_err(|e| CliError::data(e.to_string()))?
        };
        for er in &trace.epochs {
            for (class, acc) in er.per_class_accuracy.iter().enumerate() {
                let acc_text = acc.map(|a| a.to_string()).unwrap_or_default();
                let norm_text = norms
                    .get(er.epoch as usize)
                    .and_then(|row| row[class])
                    .map(|n| n.to_string())
                    .unwrap_or_default();
                writeln!(out, "{},{arm},{class},{acc_text},{norm_text}", er.epoch).unwrap();
            }
        }
    }
    Ok(out)
}

fn fed_trace_csv(arms: &[(&str, &FedTrace)]) -> String {
    let mut out = String::from("epoch,arm,group,accuracy,grad_norm\n");
    for (arm, trace) in arms {
        for rr in &trace.rounds {
            for (group, acc) in &rr.per_group_accuracy {
                writeln!(out, "{},{arm},{group},{acc},", rr.round).unwrap();
            }
        }
    }
    out
}

fn push_row(out: &mut String, key: &str, group: &str, value: &str) {
    writeln!(out, "{key},{group},{value}").unwrap();
}

#[allow(clippy::too_many_arguments)]
fn report_csv(
    disp: &DisparityReport,
    epsilon: Option<(f64, f64)>,
    epsilon_basis: Option<&str>,
    delta: f64,
    mode: &str,
    optimizer: &str,
    steps: u64,
    init_checksum: u64,
    overall_baseline: f64,
    overall_dp: f64,
) -> String {
    let mut out = String::from("key,group,value\n");
    for g in &disp.groups {
        push_row(&mut out, "accuracy_baseline", &g.group, &g.baseline_accuracy.to_string());
    }
    for g in &disp.groups {
        push_row(&mut out, "accuracy_dp", &g.group, &g.dp_accuracy.to_string());
    }
    for g in &disp.groups {
        push_row(&mut out, "drop", &g.group, &g.drop.to_string());
    }
    push_row(&mut out, "overall_accuracy_baseline", "", &overall_baseline.to_string());
    push_row(&mut out, "overall_accuracy_dp", "", &overall_dp.to_string());
    push_row(&mut out, "parity_gap_baseline", "", &disp.parity_gap_baseline.to_string());
    push_row(&mut out, "parity_gap_dp", "", &disp.parity_gap_dp.to_string());
    let rho = disp
        .rank_correlation
        .map(|r| r.to_string())
        .unwrap_or_else(|| NA.to_string());
    push_row(&mut out, "rank_correlation", "", &rho);
    push_row(&mut out, "group_count", "", &disp.groups.len().to_string());
    match epsilon {
        Some((e, order)) => {
            push_row(&mut out, "epsilon", "", &e.to_string());
            push_row(&mut out, "epsilon_order", "", &order.to_string());
        }
        None => {
            push_row(&mut out, "epsilon", "", NA);
            push_row(&mut out, "epsilon_order", "", NA);
        }
    }
    if let Some(basis) = epsilon_basis {
        push_row(&mut out, "epsilon_basis", "", basis);
    }
    push_row(&mut out, "delta", "", &delta.to_string());
    push_row(&mut out, "mode", "", mode);
    push_row(&mut out, "optimizer", "", optimizer);
    push_row(&mut out, "steps", "", &steps.to_string());
    push_row(&mut out, "init_checksum", "", &format!("{init_checksum:016x}"));
    out
}

/// `order,rdp,epsilon` rows of a composed curve, epsilon evaluated per
/// order at the given delta.
pub fn rdp_csv(curve: &PrivacyCurve, delta: f64) -> String {
    let mut out = String::from("order,rdp,epsilon\n");
    let log_inv = (1.0 / delta).ln();
    for (a, r) in curve.orders().iter().zip(curve.rdp()) {
        let eps = r + log_inv / (a - 1.0);
        writeln!(out, "{a},{r},{eps}").unwrap();
    }
    out
}

/// Human-readable accountant table for stdout.
pub fn rdp_table(curve: &PrivacyCurve, delta: f64) -> String {
    let mut out = String::from("order      rdp              epsilon\n");
    let log_inv = (1.0 / delta).ln();
    let (_, best) = to_epsilon(curve, delta).expect("non-empty curve");
    for (a, r) in curve.orders().iter().zip(curve.rdp()) {
        let eps = r + log_inv / (a - 1.0);
        let marker = if *a == best { "  <- best" } else { "" };
        writeln!(out, "{a:<10} {r:<16.8} {eps:<12.6}{marker}").unwrap();
    }
    out
}

/// Write one training run directory; `baseline` may be the same outcome as
/// `arm` for baseline-mode runs.
pub fn write_run_dir(
    dir: &Path,
    resolved_config: &str,
    baseline: &ArmOutcome,
    arm: &ArmOutcome,
    disp: &DisparityReport,
) -> CliResult<RunSummary> {
    write_file(&dir.join("config.resolved"), resolved_config)?;
    let mut arms: Vec<(&str, &TrainTrace)> = vec![("baseline", &baseline.trace)];
    if arm.mode != dpfair::optim::Mode::Baseline {
        arms.push((arm.mode.name(), &arm.trace));
    }
    write_file(&dir.join("trace.csv"), &trace_csv(&arms)?)?;
    write_file(
        &dir.join("report.csv"),
        &report_csv(
            disp,
            arm.epsilon,
            None,
            arm.dp.delta,
            arm.mode.name(),
            arm.dp.optimizer.name(),
            arm.dp.total_steps(),
            arm.init_checksum,
            baseline.eval.overall_accuracy(),
            arm.eval.overall_accuracy(),
        ),
    )?;
    if let Some(curve) = &arm.curve {
        write_file(&dir.join("rdp.csv"), &rdp_csv(curve, arm.dp.delta))?;
    }
    write_file(
        &dir.join("meta.txt"),
        &format!(
            "wall_seconds = {:.3}\nbaseline_wall_seconds = {:.3}\n",
            arm.wall_seconds, baseline.wall_seconds
        ),
    )?;
    Ok(RunSummary {
        mode: arm.mode.name(),
        epsilon: arm.epsilon,
        disparity: disp.clone(),
        init_checksum: arm.init_checksum,
    })
}

/// `arm,group,accuracy_baseline,accuracy,drop_vs_baseline,epsilon,init_checksum`
pub fn write_ablate_summary(path: &Path, summaries: &[RunSummary]) -> CliResult<()> {
    let mut out =
        String::from("arm,group,accuracy_baseline,accuracy,drop_vs_baseline,epsilon,init_checksum\n");
    for s in summaries {
        let eps = s
            .epsilon
            .map(|(e, _)| e.to_string())
            .unwrap_or_else(|| NA.to_string());
        for g in &s.disparity.groups {
            writeln!(
                out,
                "{},{},{},{},{},{},{:016x}",
                s.mode, g.group, g.baseline_accuracy, g.dp_accuracy, g.drop, eps, s.init_checksum
            )
            .unwrap();
        }
    }
    write_file(path, &out)
}

/// `param,value,epsilon,epsilon_order,group,accuracy_baseline,accuracy_dp,drop,parity_gap_dp`
pub fn write_sweep_summary(
    path: &Path,
    rows: &[(String, String, RunSummary)],
) -> CliResult<()> {
    let mut out = String::from(
        "param,value,epsilon,epsilon_order,group,accuracy_baseline,accuracy_dp,drop,parity_gap_dp\n",
    );
    for (param, value, s) in rows {
        let (eps, order) = match s.epsilon {
            Some((e, a)) => (e.to_string(), a.to_string()),
            None => (NA.to_string(), NA.to_string()),
        };
        for g in &s.disparity.groups {
            writeln!(
                out,
                "{param},{value},{eps},{order},{},{},{},{},{}",
                g.group, g.baseline_accuracy, g.dp_accuracy, g.drop, s.disparity.parity_gap_dp
            )
            .unwrap();
        }
    }
    write_file(path, &out)
}

#[allow(clippy::too_many_arguments)]
pub fn write_fed_dir(
    dir: &Path,
    resolved_config: &str,
    ref_trace: &FedTrace,
    dp_trace: &FedTrace,
    disp: &DisparityReport,
    epsilon_curve: &Option<((f64, f64), PrivacyCurve)>,
    delta: f64,
    overall_baseline: f64,
    overall_dp: f64,
    init_checksum: u64,
    wall_seconds: f64,
) -> CliResult<()> {
    write_file(&dir.join("config.resolved"), resolved_config)?;
    write_file(
        &dir.join("trace.csv"),
        &fed_trace_csv(&[("baseline", ref_trace), ("fed_dp", dp_trace)]),
    )?;
    let rounds = dp_trace.rounds.len() as u64;
    write_file(
        &dir.join("report.csv"),
        &report_csv(
            disp,
            epsilon_curve.as_ref().map(|(e, _)| *e),
            Some("participant_level_approx"),
            delta,
            "fed_dp",
            "sgd",
            rounds,
            init_checksum,
            overall_baseline,
            overall_dp,
        ),
    )?;
    if let Some((_, curve)) = epsilon_curve {
        write_file(&dir.join("rdp.csv"), &rdp_csv(curve, delta))?;
    }
    write_file(&dir.join("meta.txt"), &format!("wall_seconds = {wall_seconds:.3}\n"))?;
    Ok(())
}
