//! Single-process simulation of private federated averaging.
//!
//! Each round samples `C` of `n` participants, every sampled participant
//! trains the global model locally with plain SGD and submits the update
//! vector `L - G`; the server clips each update to norm `S`, sums them,
//! adds Gaussian noise with `sigma = z * S / C`, and moves the global
//! model:
//!
//! ```text
//! G' = G + (eta_g / n) * ( sum_i clip_S(L_i - G) + N(0, sigma^2 I) )
//! ```
//!
//! Privacy enters only at aggregation; local training is non-private.

use std::collections::BTreeMap;

use crate::audit::{evaluate, Grouping};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{loss_and_grad, ModelSpec, ParamVector};
use crate::optim::{sgd_step, ClippedSum};
use crate::rng::RandomSource;

/// Federation-wide knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    /// Total participants n.
    pub participants: usize,
    /// Participants sampled per round (C).
    pub per_round: usize,
    pub rounds: u64,
    pub local_epochs: u64,
    pub local_lr: f64,
    pub local_batch: usize,
    /// Update clip bound S; `None` disables clipping.
    pub clip_bound: Option<f64>,
    /// Noise multiplier z with sigma = z * S / C.
    pub noise_multiplier: Option<f64>,
    /// Explicit noise standard deviation (overrides the z derivation).
    pub sigma: Option<f64>,
    /// Global learning rate eta_g.
    pub global_lr: f64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.participants == 0 {
            return Err(Error::invalid("need at least one participant".to_string()));
        }
        if self.per_round == 0 || self.per_round > self.participants {
            return Err(Error::invalid(format!(
                "sample {} of {} participants",
                self.per_round, self.participants
            )));
        }
        if self.local_batch == 0 {
            return Err(Error::invalid("local_batch must be positive".to_string()));
        }
        if !(self.local_lr >= 0.0) {
            return Err(Error::invalid("local_lr must be nonnegative".to_string()));
        }
        if !(self.global_lr >= 0.0) {
            return Err(Error::invalid("global_lr must be nonnegative".to_string()));
        }
        if let Some(s) = self.clip_bound {
            if !(s > 0.0) {
                return Err(Error::invalid(format!("clip bound {s} must be positive")));
            }
        }
        if let Some(z) = self.noise_multiplier {
            if !(z >= 0.0) {
                return Err(Error::invalid(format!("noise multiplier {z} must be >= 0")));
            }
            if z > 0.0 && self.clip_bound.is_none() && self.sigma.is_none() {
                return Err(Error::invalid(
                    "noise multiplier needs a clip bound to derive sigma = z*S/C".to_string(),
                ));
            }
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0) {
                return Err(Error::invalid(format!("sigma {s} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Aggregation noise standard deviation: explicit sigma, else z*S/C.
    pub fn effective_sigma(&self) -> f64 {
        if let Some(s) = self.sigma {
            return s;
        }
        match (self.noise_multiplier, self.clip_bound) {
            (Some(z), Some(s)) => z * s / self.per_round as f64,
            _ => 0.0,
        }
    }
}

/// One simulated device: an id, a private shard and an audit group tag.
#[derive(Debug, Clone)]
pub struct Participant {
    pub id: usize,
    pub shard: LabeledDataset,
    pub group: String,
}

/// Local training: `local_epochs` of plain minibatch SGD from the global
/// parameters over the participant's shard. Returns the update `L - G`.
/// The local batch size is clamped to the shard size.
pub fn local_update(
    spec: &ModelSpec,
    global: &ParamVector,
    participant: &Participant,
    cfg: &FedConfig,
    rng: &mut RandomSource,
) -> Result<ParamVector> {
    if participant.shard.is_empty() {
        return Err(Error::invalid(format!(
            "participant {} has an empty shard",
            participant.id
        )));
    }
    let b = cfg.local_batch.min(participant.shard.len());
    let mut params = global.clone();
    let mut order: Vec<usize> = (0..participant.shard.len()).collect();
    for _ in 0..cfg.local_epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks_exact(b) {
            let batch = participant.shard.batch(chunk)?;
            let (_, grad) = loss_and_grad(spec, &params, &batch)?;
            params = sgd_step(&params, &grad, cfg.local_lr)?;
        }
    }
    let mut delta = params;
    delta.values_mut().axpy(-1.0, global.values())?;
    Ok(delta)
}

/// Server step: clip each update to S, sum, add noise, apply at rate
/// `eta_g / n`.
pub fn aggregate_round(
    global: &ParamVector,
    deltas: &[ParamVector],
    cfg: &FedConfig,
    rng: &mut RandomSource,
) -> Result<ParamVector> {
    cfg.validate()?;
    if deltas.len() != cfg.per_round {
        return Err(Error::invalid(format!(
            "{} updates vs per_round {}",
            deltas.len(),
            cfg.per_round
        )));
    }
    let mut acc = ClippedSum::new(global, cfg.clip_bound)?;
    for d in deltas {
        acc.add(d)?;
    }
    acc.add_noise(cfg.effective_sigma(), rng)?;
    let mut out = global.clone();
    out.values_mut().axpy(
        cfg.global_lr / cfg.participants as f64,
        acc.into_sum().values(),
    )?;
    Ok(out)
}

/// Per-round log: who was sampled and how the global model scored.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub selected: Vec<usize>,
    /// Global-model accuracy per audit group on the test set.
    pub per_group_accuracy: BTreeMap<String, f64>,
    pub overall_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FedTrace {
    pub rounds: Vec<RoundRecord>,
}

/// Run the full federation. Participants are sampled uniformly without
/// replacement each round and processed in ascending id order, so a fixed
/// seed reproduces the trace bit-exactly.
pub fn run_federation(
    spec: &ModelSpec,
    params0: &ParamVector,
    participants: &[Participant],
    test_ds: Option<&LabeledDataset>,
    grouping: &Grouping,
    cfg: &FedConfig,
    rng: &mut RandomSource,
) -> Result<(ParamVector, FedTrace)> {
    cfg.validate()?;
    if participants.len() != cfg.participants {
        return Err(Error::invalid(format!(
            "{} participants vs configured {}",
            participants.len(),
            cfg.participants
        )));
    }
    let mut global = params0.clone();
    let mut trace = FedTrace::default();
    for round in 0..cfg.rounds {
        let selected = rng.sample_without_replacement(cfg.participants, cfg.per_round)?;
        let mut deltas = Vec::with_capacity(selected.len());
        for &pid in &selected {
            deltas.push(local_update(spec, &global, &participants[pid], cfg, rng)?);
        }
        global = aggregate_round(&global, &deltas, cfg, rng)?;
        let (per_group_accuracy, overall_accuracy) = match test_ds {
            Some(test) => {
                let eval = evaluate(spec, &global, test, grouping)?;
                let per: BTreeMap<String, f64> = eval
                    .groups
                    .keys()
                    .map(|g| (g.clone(), eval.accuracy(g).unwrap()))
                    .collect();
                (per, eval.overall_accuracy())
            }
            None => (BTreeMap::new(), 0.0),
        };
        trace.rounds.push(RoundRecord {
            round,
            selected,
            per_group_accuracy,
            overall_accuracy,
        });
    }
    Ok((global, trace))
}
