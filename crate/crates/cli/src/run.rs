//! Command implementations: data preparation, arm execution, reports.

use std::path::Path;
use std::time::Instant;

use dpfair::accountant;
use dpfair::audit::{self, Grouping};
use dpfair::data::{self, ImbalanceSpec, LabeledDataset, ShardStrategy};
use dpfair::fed::{self, FedConfig, FedTrace, Participant};
use dpfair::model::{init_params, ModelSpec, ParamVector};
use dpfair::optim::{self, DpConfig, Mode, OptimizerKind, TrainTrace};
use dpfair::rng::RandomSource;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult, Kind};
use crate::report;

/// Stream ids deriving every subsystem's randomness from the master seed.
pub const STREAM_DATA: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_NOISE: u64 = 3;
pub const STREAM_FED: u64 = 4;
pub const STREAM_SHUFFLE: u64 = 5;
pub const STREAM_SHARD: u64 = 6;

pub struct Prepared {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Dataset size used for the accountant's q and K (the pre-imbalance
    /// size unless overridden).
    pub accounting_n: usize,
    pub spec: ModelSpec,
    pub grouping: Grouping,
    pub seed: u64,
}

fn parse_grouping(s: &str) -> CliResult<Grouping> {
    if s == "label" {
        Ok(Grouping::Label)
    } else if let Some(key) = s.strip_prefix("meta:") {
        Ok(Grouping::Metadata(key.to_string()))
    } else {
        Err(CliError::config(format!(
            "eval.grouping '{s}' (want 'label' or 'meta:<key>')"
        )))
    }
}

/// Load or synthesize the data, apply the imbalance, build the model spec.
pub fn prepare(cfg: &ExperimentConfig) -> CliResult<Prepared> {
    let seed = cfg.get_u64("seed")?;
    let mut data_rng = RandomSource::new(seed, STREAM_DATA);

    let (mut train, mut test) = match cfg.get_str("data.source")? {
        "synthetic" => {
            let k = cfg.get_usize("data.classes")?;
            let per = cfg.get_usize("data.per_class")?;
            let test_per = cfg.get_usize("data.test_per_class")?;
            let dim = cfg.get_usize("data.input_dim")?;
            let sep = cfg.get_f64("data.separation")?;
            let counts = vec![per + test_per; k];
            let pool = data::make_synthetic(k, &counts, dim, sep, &mut data_rng)
                .map_err(|e| CliError::from_core(Kind::Data, e))?;
            data::split_per_class(&pool, &vec![test_per; k])
                .map_err(|e| CliError::from_core(Kind::Data, e))?
        }
        "idx" => {
            let tr = data::read_idx(
                Path::new(cfg.get_str("data.idx_images")?),
                Path::new(cfg.get_str("data.idx_labels")?),
            )
            .map_err(|e| CliError::from_core(Kind::Data, e))?;
            let te = data::read_idx(
                Path::new(cfg.get_str("data.idx_test_images")?),
                Path::new(cfg.get_str("data.idx_test_labels")?),
            )
            .map_err(|e| CliError::from_core(Kind::Data, e))?;
            (tr, te)
        }
        other => {
            return Err(CliError::config(format!(
                "data.source '{other}' (want synthetic or idx)"
            )))
        }
    };
    let k = train.num_classes.max(test.num_classes);
    train.num_classes = k;
    test.num_classes = k;

    let pre_imbalance_n = train.len();
    if let Some(keep) = cfg.get_opt_usize("imbalance.keep")? {
        let target_class = cfg.get_usize("imbalance.class")?;
        train = data::imbalance(
            &train,
            ImbalanceSpec { target_class, keep_count: keep },
            &mut data_rng,
        )
        .map_err(|e| CliError::from_core(Kind::Data, e))?;
    }
    let accounting_n = match cfg.get_opt_usize("dp.accounting_n")? {
        Some(n) => n,
        None => pre_imbalance_n,
    };

    let input_dim: usize = train.example_shape().iter().product();
    let spec = match cfg.get_str("model")? {
        "mlp" => {
            let hidden = cfg.get_usize_list("model.hidden")?;
            ModelSpec::mlp(input_dim, &hidden, k)
        }
        "convnet" => {
            if input_dim != 28 * 28 {
                return Err(CliError::config(format!(
                    "convnet expects 784-valued examples, data has {input_dim}"
                )));
            }
            if k != 10 {
                return Err(CliError::config(format!(
                    "convnet expects 10 classes, data has {k}"
                )));
            }
            train = train
                .reshape_examples(&[1, 28, 28])
                .map_err(|e| CliError::from_core(Kind::Data, e))?;
            test = test
                .reshape_examples(&[1, 28, 28])
                .map_err(|e| CliError::from_core(Kind::Data, e))?;
            ModelSpec::reference_convnet()
        }
        other => {
            return Err(CliError::config(format!(
                "model '{other}' (want mlp or convnet)"
            )))
        }
    };
    spec.validate()
        .map_err(|e| CliError::from_core(Kind::Config, e))?;

    let grouping = parse_grouping(cfg.get_str("eval.grouping")?)?;
    Ok(Prepared { train, test, accounting_n, spec, grouping, seed })
}

/// Translate config keys into a trainer configuration for one arm.
pub fn build_dp_config(
    cfg: &ExperimentConfig,
    mode: Mode,
    dataset_size: usize,
) -> CliResult<DpConfig> {
    let clip_bound = cfg.get_opt_f64("dp.clip")?;
    let noise_multiplier = cfg.get_opt_f64("dp.noise_multiplier")?;
    let mut sigma = cfg.get_opt_f64("dp.sigma")?;
    if mode == Mode::NoiseOnly && sigma.is_none() {
        // ablation arms reuse the clip-and-noise scale: sigma = z * S
        sigma = match (noise_multiplier, clip_bound) {
            (Some(z), Some(s)) => Some(z * s),
            _ => {
                return Err(CliError::config(
                    "noise_only needs dp.sigma, or dp.noise_multiplier with dp.clip to derive it"
                        .to_string(),
                ))
            }
        };
    }
    let dp = DpConfig {
        mode,
        optimizer: OptimizerKind::parse(cfg.get_str("train.optimizer")?)
            .map_err(|e| CliError::from_core(Kind::Config, e))?,
        learning_rate: cfg.get_f64("train.lr")?,
        clip_bound,
        noise_multiplier,
        sigma,
        batch_size: cfg.get_usize("train.batch")?,
        dataset_size,
        epochs: cfg.get_u64("train.epochs")?,
        delta: cfg.get_f64("dp.delta")?,
    };
    dp.validate().map_err(|e| CliError::from_core(Kind::Config, e))?;
    Ok(dp)
}

/// One fully-trained arm and everything the reports need from it.
pub struct ArmOutcome {
    pub mode: Mode,
    pub dp: DpConfig,
    pub trace: TrainTrace,
    pub eval: audit::GroupedEval,
    /// (epsilon, achieving order) when the mode carries a noise multiplier.
    pub epsilon: Option<(f64, f64)>,
    pub curve: Option<accountant::PrivacyCurve>,
    pub init_checksum: u64,
    pub wall_seconds: f64,
}

pub fn run_arm(cfg: &ExperimentConfig, prep: &Prepared, mode: Mode) -> CliResult<ArmOutcome> {
    let start = Instant::now();
    let dp = build_dp_config(cfg, mode, prep.train.len())?;
    let params0 = init_params(&prep.spec, &mut RandomSource::new(prep.seed, STREAM_INIT))
        .map_err(|e| CliError::from_core(Kind::Config, e))?;
    let init_checksum = report::checksum(&params0);
    let (params, trace) = optim::train(
        &prep.spec,
        &params0,
        &prep.train,
        Some(&prep.test),
        &dp,
        &mut RandomSource::new(prep.seed, STREAM_SHUFFLE),
        &mut RandomSource::new(prep.seed, STREAM_NOISE),
    )
    .map_err(|e| CliError::from_core(Kind::Numeric, e))?;
    let eval = audit::evaluate(&prep.spec, &params, &prep.test, &prep.grouping)
        .map_err(|e| CliError::from_core(Kind::Numeric, e))?;

    let (epsilon, curve) = if mode.noises() {
        match dp.noise_multiplier {
            Some(z) if z > 0.0 => {
                let curve =
                    accountant::curve_for_run(prep.accounting_n, dp.batch_size, z, dp.epochs)
                        .map_err(|e| CliError::from_core(Kind::Numeric, e))?;
                let eps = accountant::to_epsilon(&curve, dp.delta)
                    .map_err(|e| CliError::from_core(Kind::Numeric, e))?;
                (Some(eps), Some(curve))
            }
            // noise without a multiplier (explicit sigma, no clip bound)
            // has no finite guarantee to price
            _ => (None, None),
        }
    } else {
        (None, None)
    };

    Ok(ArmOutcome {
        mode,
        dp,
        trace,
        eval,
        epsilon,
        curve,
        init_checksum,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Train the configured mode (plus a baseline reference when the mode is
/// private) and write one run directory.
pub fn cmd_train(cfg: &ExperimentConfig, dir: &Path) -> CliResult<report::RunSummary> {
    let prep = prepare(cfg)?;
    let mode = Mode::parse(cfg.get_str("dp.mode")?)
        .map_err(|e| CliError::from_core(Kind::Config, e))?;
    let arm = run_arm(cfg, &prep, mode)?;
    let baseline = if mode == Mode::Baseline {
        None
    } else {
        Some(run_arm(cfg, &prep, Mode::Baseline)?)
    };
    let base_ref = baseline.as_ref().unwrap_or(&arm);
    let disp = audit::disparity(&base_ref.eval, &arm.eval)
        .map_err(|e| CliError::from_core(Kind::Numeric, e))?;
    let summary = report::write_run_dir(dir, &cfg.to_resolved_text(), base_ref, &arm, &disp)?;
    println!(
        "train mode={} overall_dp={:.4} parity_gap_dp={:.4} epsilon={} -> {}",
        mode.name(),
        arm.eval.overall_accuracy(),
        disp.parity_gap_dp,
        summary.epsilon_text(),
        dir.display()
    );
    Ok(summary)
}

pub const ABLATION_ARMS: [Mode; 4] =
    [Mode::Baseline, Mode::ClipOnly, Mode::NoiseOnly, Mode::ClipAndNoise];

/// Run all four ablation arms over shared data, seed and initialization.
pub fn cmd_ablate(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Vec<report::RunSummary>> {
    let prep = prepare(cfg)?;
    let mut outcomes = Vec::new();
    for mode in ABLATION_ARMS {
        outcomes.push(run_arm(cfg, &prep, mode)?);
    }
    if outcomes.iter().any(|o| o.init_checksum != outcomes[0].init_checksum) {
        return Err(CliError {
            kind: Kind::Numeric,
            msg: "ablation arms diverged at initialization".to_string(),
        });
    }
    let mut summaries = Vec::new();
    for outcome in &outcomes {
        let disp = audit::disparity(&outcomes[0].eval, &outcome.eval)
            .map_err(|e| CliError::from_core(Kind::Numeric, e))?;
        let arm_dir = dir.join(outcome.mode.name());
        let summary = report::write_run_dir(
            &arm_dir,
            &cfg.to_resolved_text(),
            &outcomes[0],
            outcome,
            &disp,
        )?;
        println!(
            "ablate arm={} overall={:.4} epsilon={}",
            outcome.mode.name(),
            outcome.eval.overall_accuracy(),
            summary.epsilon_text()
        );
        summaries.push(summary);
    }
    report::write_ablate_summary(&dir.join("summary.csv"), &summaries)?;
    Ok(summaries)
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// One run per sweep value, shared seed, plus a flat summary table.
pub fn cmd_sweep(cfg: &ExperimentConfig, dir: &Path) -> CliResult<()> {
    if cfg.sweeps().is_empty() {
        return Err(CliError::config(
            "sweep requires at least one 'sweep.<param> = v1,v2,...' block".to_string(),
        ));
    }
    let mut rows = Vec::new();
    for (param, values) in cfg.sweeps() {
        for value in values {
            let sub = cfg.with_value(param, value)?;
            let run_dir = dir.join(sanitize(param)).join(sanitize(value));
            let summary = cmd_train(&sub, &run_dir)?;
            rows.push((param.clone(), value.clone(), summary));
        }
    }
    report::write_sweep_summary(&dir.join("summary.csv"), &rows)?;
    Ok(())
}

fn build_fed_config(cfg: &ExperimentConfig) -> CliResult<FedConfig> {
    let fc = FedConfig {
        participants: cfg.get_usize("fed.participants")?,
        per_round: cfg.get_usize("fed.per_round")?,
        rounds: cfg.get_u64("fed.rounds")?,
        local_epochs: cfg.get_u64("fed.local_epochs")?,
        local_lr: cfg.get_f64("fed.local_lr")?,
        local_batch: cfg.get_usize("fed.local_batch")?,
        clip_bound: cfg.get_opt_f64("fed.clip")?,
        noise_multiplier: cfg.get_opt_f64("fed.noise_multiplier")?,
        sigma: cfg.get_opt_f64("fed.sigma")?,
        global_lr: cfg.get_f64("fed.global_lr")?,
    };
    fc.validate().map_err(|e| CliError::from_core(Kind::Config, e))?;
    Ok(fc)
}

/// Private federation plus a non-private reference federation on the same
/// seed, shards and initialization.
pub fn cmd_fed(cfg: &ExperimentConfig, dir: &Path) -> CliResult<()> {
    let start = Instant::now();
    let prep = prepare(cfg)?;
    let fed_cfg = build_fed_config(cfg)?;

    let strategy = match cfg.get_str("fed.shard")? {
        "iid" => ShardStrategy::Iid,
        "by_group" => ShardStrategy::ByGroup {
            classes: cfg.get_usize_list("fed.group_classes")?,
            holders: cfg.get_usize("fed.group_holders")?,
        },
        other => {
            return Err(CliError::config(format!(
                "fed.shard '{other}' (want iid or by_group)"
            )))
        }
    };
    let shards = data::shard(
        &prep.train,
        fed_cfg.participants,
        &strategy,
        &mut RandomSource::new(prep.seed, STREAM_SHARD),
    )
    .map_err(|e| CliError::from_core(Kind::Data, e))?;
    let holders = match &strategy {
        ShardStrategy::ByGroup { holders, .. } => *holders,
        ShardStrategy::Iid => 0,
    };
    let participants: Vec<Participant> = shards
        .into_iter()
        .enumerate()
        .map(|(id, shard)| Participant {
            id,
            shard,
            group: if holders == 0 {
                "all".to_string()
            } else if id < holders {
                "rare".to_string()
            } else {
                "majority".to_string()
            },
        })
        .collect();

    let params0 = init_params(&prep.spec, &mut RandomSource::new(prep.seed, STREAM_INIT))
        .map_err(|e| CliError::from_core(Kind::Config, e))?;

    let run = |fc: &FedConfig| -> CliResult<(ParamVector, FedTrace)> {
        fed::run_federation(
            &prep.spec,
            &params0,
            &participants,
            Some(&prep.test),
            &prep.grouping,
            fc,
            &mut RandomSource::new(prep.seed, STREAM_FED),
        )
        .map_err(|e| CliError::from_core(Kind::Numeric, e))
    };

    let (dp_params, dp_trace) = run(&fed_cfg)?;
    let mut ref_cfg = fed_cfg.clone();
    ref_cfg.clip_bound = None;
    ref_cfg.noise_multiplier = None;
    ref_cfg.sigma = None;
    let (ref_params, ref_trace) = run(&ref_cfg)?;

    let dp_eval = audit::evaluate(&prep.spec, &dp_params, &prep.test, &prep.grouping)
        .map_err(|e| CliError::from_core(Kind::Numeric, e))?;
    let ref_eval = audit::evaluate(&prep.spec, &ref_params, &prep.test, &prep.grouping)
        .map_err(|e| CliError::from_core(Kind::Numeric, e))?;
    let disp = audit::disparity(&ref_eval, &dp_eval)
        .map_err(|e| CliError::from_core(Kind::Numeric, e))?;

    // participant-level accounting approximation: q = C/n per round,
    // composed over rounds
    let epsilon_curve = match fed_cfg.noise_multiplier {
        Some(z) if z > 0.0 && fed_cfg.rounds > 0 => {
            let q = fed_cfg.per_round as f64 / fed_cfg.participants as f64;
            let per = accountant::PrivacyCurve::per_step(q, z, &accountant::default_orders())
                .map_err(|e| CliError::from_core(Kind::Numeric, e))?;
            let curve = accountant::compose(&per, fed_cfg.rounds);
            let delta = cfg.get_f64("dp.delta")?;
            let eps = accountant::to_epsilon(&curve, delta)
                .map_err(|e| CliError::from_core(Kind::Numeric, e))?;
            Some((eps, curve))
        }
        _ => None,
    };

    report::write_fed_dir(
        dir,
        &cfg.to_resolved_text(),
        &ref_trace,
        &dp_trace,
        &disp,
        &epsilon_curve,
        cfg.get_f64("dp.delta")?,
        ref_eval.overall_accuracy(),
        dp_eval.overall_accuracy(),
        report::checksum(&params0),
        start.elapsed().as_secs_f64(),
    )?;
    println!(
        "fed rounds={} overall_dp={:.4} parity_gap_dp={:.4} -> {}",
        fed_cfg.rounds,
        dp_eval.overall_accuracy(),
        disp.parity_gap_dp,
        dir.display()
    );
    Ok(())
}

/// Pure accountant query: prints the order table and the chosen epsilon.
pub fn cmd_accountant(n: usize, b: usize, z: f64, epochs: u64, delta: f64) -> CliResult<f64> {
    let curve = accountant::curve_for_run(n, b, z, epochs)
        .map_err(|e| CliError::from_core(Kind::Config, e))?;
    let (eps, best) = accountant::to_epsilon(&curve, delta)
        .map_err(|e| CliError::from_core(Kind::Config, e))?;
    println!("{}", report::rdp_table(&curve, delta));
    println!(
        "epsilon = {eps:.6} at order {best} (delta = {delta:e}, steps = {}, q = {})",
        epochs * (n / b) as u64,
        b as f64 / n as f64
    );
    Ok(eps)
}
