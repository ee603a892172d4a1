//! Private and non-private minibatch training.
//!
//! The private step bounds each example's influence by clipping its
//! gradient to L2 norm `S`, sums the clipped gradients, adds one Gaussian
//! noise vector with standard deviation `sigma = z * S`, and scales the
//! result by `1/(q*N)` before the optimizer update:
//!
//! ```text
//! g_batch = ( sum_i clip_S(g_i) + N(0, sigma^2 I) ) / (q * N)
//! ```
//!
//! The ablation modes switch the two mechanisms independently so their
//! separate effects on underrepresented classes can be measured.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{self, ModelSpec, ParamVector};
use crate::rng::{gaussian_vector, RandomSource};

/// Which privacy mechanisms are active during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Plain minibatch training; no clipping, no noise.
    Baseline,
    ClipOnly,
    NoiseOnly,
    ClipAndNoise,
}

impl Mode {
    pub fn clips(self) -> bool {
        matches!(self, Mode::ClipOnly | Mode::ClipAndNoise)
    }

    pub fn noises(self) -> bool {
        matches!(self, Mode::NoiseOnly | Mode::ClipAndNoise)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::ClipOnly => "clip_only",
            Mode::NoiseOnly => "noise_only",
            Mode::ClipAndNoise => "clip_and_noise",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "clip_only" => Ok(Mode::ClipOnly),
            "noise_only" => Ok(Mode::NoiseOnly),
            "clip_and_noise" => Ok(Mode::ClipAndNoise),
            other => Err(Error::invalid(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<OptimizerKind> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Full private-training configuration.
///
/// `dataset_size` is the size of the set actually being iterated; the
/// sampling rate is `q = batch_size / dataset_size`, so the step scaling
/// `1/(q*N)` equals `1/batch_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    pub mode: Mode,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Clip bound S; required by the clipping modes.
    pub clip_bound: Option<f64>,
    /// Noise multiplier z with sigma = z * S.
    pub noise_multiplier: Option<f64>,
    /// Explicit noise standard deviation; required by `noise_only`, where
    /// no clip bound exists to derive it from.
    pub sigma: Option<f64>,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub epochs: u64,
    pub delta: f64,
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive".to_string()));
        }
        if self.dataset_size == 0 || self.batch_size > self.dataset_size {
            return Err(Error::invalid(format!(
                "batch {} of dataset {}",
                self.batch_size, self.dataset_size
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive".to_string()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta {} outside (0,1)", self.delta)));
        }
        if self.mode.clips() {
            match self.clip_bound {
                Some(s) if s > 0.0 => {}
                other => {
                    return Err(Error::invalid(format!(
                        "mode {} needs a positive clip bound, got {:?}",
                        self.mode.name(),
                        other
                    )))
                }
            }
        }
        match self.mode {
            Mode::ClipAndNoise => {
                let z = self.noise_multiplier.ok_or_else(|| {
                    Error::invalid("clip_and_noise needs a noise multiplier".to_string())
                })?;
                if !(z >= 0.0) {
                    return Err(Error::invalid(format!("noise multiplier {z} must be >= 0")));
                }
                if let Some(sigma) = self.sigma {
                    let derived = z * self.clip_bound.unwrap();
                    if (sigma - derived).abs() > 1e-12 * derived.max(1.0) {
                        return Err(Error::invalid(format!(
                            "sigma {sigma} inconsistent with z*S = {derived}"
                        )));
                    }
                }
            }
            Mode::NoiseOnly => match self.sigma {
                Some(s) if s >= 0.0 => {}
                other => {
                    return Err(Error::invalid(format!(
                        "noise_only needs an explicit sigma, got {:?}",
                        other
                    )))
                }
            },
            _ => {}
        }
        Ok(())
    }

    pub fn sampling_rate(&self) -> f64 {
        self.batch_size as f64 / self.dataset_size as f64
    }

    /// Clip bound if the mode clips.
    pub fn effective_clip(&self) -> Option<f64> {
        if self.mode.clips() {
            self.clip_bound
        } else {
            None
        }
    }

    /// Noise standard deviation actually applied (0 when the mode does not
    /// add noise).
    pub fn effective_sigma(&self) -> f64 {
        match self.mode {
            Mode::ClipAndNoise => self
                .sigma
                .unwrap_or_else(|| self.noise_multiplier.unwrap_or(0.0) * self.clip_bound.unwrap_or(0.0)),
            Mode::NoiseOnly => self.sigma.unwrap_or(0.0),
            _ => 0.0,
        }
    }

    pub fn steps_per_epoch(&self) -> u64 {
        (self.dataset_size / self.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.epochs * self.steps_per_epoch()
    }
}

/// Project a gradient onto the L2 ball of radius `s`:
/// `g * min(1, s / ||g||)`. Direction is preserved.
pub fn clip_to_norm(g: &ParamVector, s: f64) -> Result<ParamVector> {
    if !(s > 0.0) {
        return Err(Error::invalid(format!("clip bound {s} must be positive")));
    }
    let norm = g.l2_norm()?;
    let scale = (s / norm).min(1.0);
    let mut out = g.clone();
    out.values_mut().scale_in_place(scale);
    Ok(out)
}

/// Running clipped sum over per-example gradients (or update vectors); one
/// of these backs [`privatize_batch`], the trainer's fused step and the
/// federated aggregator so they cannot drift apart numerically.
pub(crate) struct ClippedSum {
    sum: ParamVector,
    clip: Option<f64>,
    count: usize,
}

impl ClippedSum {
    pub(crate) fn new(template: &ParamVector, clip: Option<f64>) -> Result<ClippedSum> {
        if let Some(s) = clip {
            if !(s > 0.0) {
                return Err(Error::invalid(format!("clip bound {s} must be positive")));
            }
        }
        let mut sum = template.clone();
        sum.values_mut().data_mut().fill(0.0);
        Ok(ClippedSum { sum, clip, count: 0 })
    }

    /// Add one gradient; returns its pre-clip norm.
    pub(crate) fn add(&mut self, g: &ParamVector) -> Result<f64> {
        let norm = g.l2_norm()?;
        let scale = match self.clip {
            Some(s) => (s / norm).min(1.0),
            None => 1.0,
        };
        self.sum.values_mut().axpy(scale, g.values())?;
        self.count += 1;
        Ok(norm)
    }

    pub(crate) fn pre_noise_norm(&self) -> Result<f64> {
        self.sum.l2_norm()
    }

    /// Add the noise vector, without any scaling.
    pub(crate) fn add_noise(&mut self, sigma: f64, rng: &mut RandomSource) -> Result<()> {
        if sigma > 0.0 {
            let noise = gaussian_vector(rng, self.sum.len(), sigma)?;
            self.sum.values_mut().axpy(1.0, &noise)?;
        }
        Ok(())
    }

    pub(crate) fn into_sum(self) -> ParamVector {
        self.sum
    }

    /// Add the noise vector and apply the `1/(q*N)` scaling.
    fn finish(mut self, sigma: f64, qn: f64, rng: &mut RandomSource) -> Result<ParamVector> {
        self.add_noise(sigma, rng)?;
        self.sum.values_mut().scale_in_place(1.0 / qn);
        Ok(self.sum)
    }
}

/// Turn per-example gradients into one privatized update gradient:
/// clipped sum plus noise, scaled by `1/(q*N)`. Under `baseline` this is
/// exactly the plain mean gradient.
pub fn privatize_batch(
    grads: &[ParamVector],
    cfg: &DpConfig,
    rng: &mut RandomSource,
) -> Result<ParamVector> {
    cfg.validate()?;
    if grads.is_empty() {
        return Err(Error::invalid("no gradients to privatize".to_string()));
    }
    if grads.len() != cfg.batch_size {
        return Err(Error::invalid(format!(
            "{} gradients vs batch_size {}",
            grads.len(),
            cfg.batch_size
        )));
    }
    let mut acc = ClippedSum::new(&grads[0], cfg.effective_clip())?;
    for g in grads {
        acc.add(g)?;
    }
    let qn = cfg.sampling_rate() * cfg.dataset_size as f64;
    acc.finish(cfg.effective_sigma(), qn, rng)
}

/// One plain gradient-descent update: `params - eta * g`.
pub fn sgd_step(params: &ParamVector, g: &ParamVector, eta: f64) -> Result<ParamVector> {
    let mut out = params.clone();
    out.values_mut().axpy(-eta, g.values())?;
    Ok(out)
}

/// First/second moment state for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(param_count: usize) -> AdamState {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }
}

/// Bias-corrected Adam update applied to the (privatized) gradient.
pub fn adam_step(
    state: &mut AdamState,
    params: &ParamVector,
    g: &ParamVector,
    eta: f64,
) -> Result<ParamVector> {
    if state.m.len() != g.len() || params.len() != g.len() {
        return Err(Error::shape(format!(
            "adam state {} vs gradient {} vs params {}",
            state.m.len(),
            g.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let mut out = params.clone();
    let gd = g.values().data();
    for (i, p) in out.values_mut().data_mut().iter_mut().enumerate() {
        let gi = gd[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * gi;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * gi * gi;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        *p -= eta * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(out)
}

/// Per-step training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// Mean per-example loss over the batch.
    pub loss: f64,
    /// Sum of pre-clip per-example gradient norms, by class.
    pub class_norm_sums: Vec<f64>,
    /// Batch members per class.
    pub class_counts: Vec<usize>,
    /// Norm of the clipped sum, before noise and scaling.
    pub post_clip_norm: f64,
}

impl StepRecord {
    /// Mean pre-clip gradient norm of one class in this batch, if present.
    pub fn mean_norm(&self, class: usize) -> Option<f64> {
        let c = self.class_counts[class];
        (c > 0).then(|| self.class_norm_sums[class] / c as f64)
    }
}

/// Per-epoch held-out evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Accuracy per class; `None` for classes absent from the test set.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub overall_accuracy: f64,
}

/// Everything observed during one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub num_classes: usize,
    /// Optimizer steps per epoch (`floor(N/b)`); fixes epoch boundaries
    /// inside `steps`.
    pub steps_per_epoch: u64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn per_class_accuracy(
    spec: &ModelSpec,
    params: &ParamVector,
    ds: &LabeledDataset,
) -> Result<(Vec<Option<f64>>, f64)> {
    let k = spec.num_classes;
    let mut correct = vec![0usize; k];
    let mut total = vec![0usize; k];
    let chunk = 512;
    let mut start = 0;
    while start < ds.len() {
        let end = (start + chunk).min(ds.len());
        let idx: Vec<usize> = (start..end).collect();
        let batch = ds.batch(&idx)?;
        let preds = model::predict(spec, params, &batch.inputs)?;
        for (p, &l) in preds.iter().zip(&batch.labels) {
            total[l] += 1;
            if *p == l {
                correct[l] += 1;
            }
        }
        start = end;
    }
    let per_class = (0..k)
        .map(|c| (total[c] > 0).then(|| correct[c] as f64 / total[c] as f64))
        .collect();
    let overall = correct.iter().sum::<usize>() as f64 / ds.len().max(1) as f64;
    Ok((per_class, overall))
}

/// Run `epochs * floor(N/b)` private (or baseline) steps from `params0`.
///
/// Each epoch visits a seed-determined permutation of the training set in
/// fixed-size batches, dropping the final partial batch. Shuffling and
/// noise consume separate streams so ablation arms sharing a seed see
/// identical data order.
pub fn train(
    spec: &ModelSpec,
    params0: &ParamVector,
    train_ds: &LabeledDataset,
    test_ds: Option<&LabeledDataset>,
    cfg: &DpConfig,
    shuffle_rng: &mut RandomSource,
    noise_rng: &mut RandomSource,
) -> Result<(ParamVector, TrainTrace)> {
    cfg.validate()?;
    spec.validate()?;
    if train_ds.is_empty() {
        return Err(Error::invalid("empty training set".to_string()));
    }
    if train_ds.len() != cfg.dataset_size {
        return Err(Error::invalid(format!(
            "config dataset_size {} vs actual {}",
            cfg.dataset_size,
            train_ds.len()
        )));
    }
    if train_ds.num_classes != spec.num_classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes, model {}",
            train_ds.num_classes, spec.num_classes
        )));
    }

    let k = spec.num_classes;
    let b = cfg.batch_size;
    let clip = cfg.effective_clip();
    let sigma = cfg.effective_sigma();
    let qn = cfg.sampling_rate() * cfg.dataset_size as f64;
    let eta = cfg.learning_rate;

    let mut params = params0.clone();
    let mut adam = AdamState::new(params.len());
    let mut scratch = params.clone();
    scratch.values_mut().data_mut().fill(0.0);

    let mut trace = TrainTrace {
        num_classes: k,
        steps_per_epoch: cfg.steps_per_epoch(),
        steps: Vec::with_capacity(cfg.total_steps() as usize),
        epochs: Vec::new(),
    };

    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks_exact(b) {
            let mut acc = ClippedSum::new(&params, clip)?;
            let mut loss_sum = 0.0;
            let mut class_norm_sums = vec![0.0; k];
            let mut class_counts = vec![0usize; k];
            for &i in chunk {
                let x = model::example_row(&train_ds.inputs, i)?;
                let label = train_ds.labels[i];
                let loss = model::single_example_grad(spec, &params, &x, label, &mut scratch)?;
                loss_sum += loss;
                let norm = acc.add(&scratch)?;
                class_norm_sums[label] += norm;
                class_counts[label] += 1;
            }
            let post_clip_norm = acc.pre_noise_norm()?;
            let g = acc.finish(sigma, qn, noise_rng)?;
            params = match cfg.optimizer {
                OptimizerKind::Sgd => sgd_step(&params, &g, eta)?,
                OptimizerKind::Adam => adam_step(&mut adam, &params, &g, eta)?,
            };
            trace.steps.push(StepRecord {
                step,
                loss: loss_sum / b as f64,
                class_norm_sums,
                class_counts,
                post_clip_norm,
            });
            step += 1;
        }
        if let Some(test) = test_ds {
            let (per_class, overall) = per_class_accuracy(spec, &params, test)?;
            trace.epochs.push(EpochRecord {
                epoch,
                per_class_accuracy: per_class,
                overall_accuracy: overall,
            });
        }
    }
    debug_assert_eq!(trace.steps.len() as u64, cfg.total_steps());
    Ok((params, trace))
}
