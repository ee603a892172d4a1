//! Disparity auditing: per-group accuracy, confusion matrices, accuracy
//! parity gaps, private-vs-baseline drops and their rank correlation.

use std::collections::BTreeMap;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{self, ModelSpec, ParamVector};
use crate::optim::TrainTrace;

/// How examples are grouped for auditing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Grouping {
    /// Each class is its own group.
    Label,
    /// Group by a named metadata column.
    Metadata(String),
}

/// Correct/total counts per group plus the full confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedEval {
    /// Group name -> (correct, total). Groups absent from the data are
    /// absent here, never reported as 0/0.
    pub groups: BTreeMap<String, (usize, usize)>,
    /// `confusion[true_class][predicted_class]`.
    pub confusion: Vec<Vec<usize>>,
    pub num_classes: usize,
}

impl GroupedEval {
    pub fn accuracy(&self, group: &str) -> Option<f64> {
        self.groups
            .get(group)
            .map(|&(correct, total)| correct as f64 / total as f64)
    }

    pub fn overall_accuracy(&self) -> f64 {
        let correct: usize = self.groups.values().map(|&(c, _)| c).sum();
        let total: usize = self.groups.values().map(|&(_, t)| t).sum();
        correct as f64 / total.max(1) as f64
    }

    /// Max minus min group accuracy.
    pub fn parity_gap(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(correct, total) in self.groups.values() {
            let a = correct as f64 / total as f64;
            lo = lo.min(a);
            hi = hi.max(a);
        }
        if self.groups.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

/// Count per-group accuracy of `params` on a test set.
pub fn evaluate(
    spec: &ModelSpec,
    params: &ParamVector,
    ds: &LabeledDataset,
    grouping: &Grouping,
) -> Result<GroupedEval> {
    if ds.is_empty() {
        return Err(Error::invalid("empty evaluation set".to_string()));
    }
    let group_of: Vec<String> = match grouping {
        Grouping::Label => ds.labels.iter().map(|l| l.to_string()).collect(),
        Grouping::Metadata(key) => {
            let col = ds.metadata.get(key).ok_or_else(|| {
                Error::invalid(format!("unknown grouping key '{key}'"))
            })?;
            col.clone()
        }
    };
    let k = spec.num_classes;
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut confusion = vec![vec![0usize; k]; k];
    let chunk = 512;
    let mut start = 0;
    while start < ds.len() {
        let end = (start + chunk).min(ds.len());
        let idx: Vec<usize> = (start..end).collect();
        let batch = ds.batch(&idx)?;
        let preds = model::predict(spec, params, &batch.inputs)?;
        for (offset, (&pred, &label)) in preds.iter().zip(&batch.labels).enumerate() {
            let entry = groups.entry(group_of[start + offset].clone()).or_insert((0, 0));
            entry.1 += 1;
            if pred == label {
                entry.0 += 1;
            }
            confusion[label][pred] += 1;
        }
        start = end;
    }
    Ok(GroupedEval { groups, confusion, num_classes: k })
}

/// One group's row in a disparity report.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDisparity {
    pub group: String,
    pub baseline_accuracy: f64,
    pub dp_accuracy: f64,
    /// baseline minus private accuracy.
    pub drop: f64,
}

/// Side-by-side comparison of a baseline and a private evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityReport {
    /// Sorted by group name; lists every group present in the eval sets.
    pub groups: Vec<GroupDisparity>,
    pub parity_gap_baseline: f64,
    pub parity_gap_dp: f64,
    /// Spearman rank correlation between baseline accuracy and drop;
    /// `None` when fewer than 3 groups (or all ranks tie).
    pub rank_correlation: Option<f64>,
}

/// Spearman rank correlation with average ranks for ties.
fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &ii in &idx[i..=j] {
                out[ii] = avg;
            }
            i = j + 1;
        }
        out
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in rx.iter().zip(&ry) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Compare per-group accuracy of a baseline and a private model evaluated
/// over the same group universe.
pub fn disparity(baseline: &GroupedEval, dp: &GroupedEval) -> Result<DisparityReport> {
    let base_keys: Vec<&String> = baseline.groups.keys().collect();
    let dp_keys: Vec<&String> = dp.groups.keys().collect();
    if base_keys != dp_keys {
        return Err(Error::invalid(format!(
            "group universes differ: {:?} vs {:?}",
            base_keys, dp_keys
        )));
    }
    let mut groups = Vec::with_capacity(base_keys.len());
    for key in baseline.groups.keys() {
        let a = baseline.accuracy(key).unwrap();
        let d = dp.accuracy(key).unwrap();
        groups.push(GroupDisparity {
            group: key.clone(),
            baseline_accuracy: a,
            dp_accuracy: d,
            drop: a - d,
        });
    }
    let rank_correlation = if groups.len() >= 3 {
        let xs: Vec<f64> = groups.iter().map(|g| g.baseline_accuracy).collect();
        let ys: Vec<f64> = groups.iter().map(|g| g.drop).collect();
        spearman(&xs, &ys)
    } else {
        None
    };
    Ok(DisparityReport {
        groups,
        parity_gap_baseline: baseline.parity_gap(),
        parity_gap_dp: dp.parity_gap(),
        rank_correlation,
    })
}

/// Epoch-aggregated mean pre-clip gradient norms: `summary[epoch][class]`,
/// `None` where a class never appeared in that epoch's batches.
pub fn gradient_norm_summary(trace: &TrainTrace) -> Result<Vec<Vec<Option<f64>>>> {
    if trace.steps.is_empty() {
        return Err(Error::invalid("empty training trace".to_string()));
    }
    let per_epoch = trace.steps_per_epoch as usize;
    if per_epoch == 0 {
        return Err(Error::invalid("trace has zero steps per epoch".to_string()));
    }
    let k = trace.num_classes;
    let mut out = Vec::new();
    for steps in trace.steps.chunks(per_epoch) {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for s in steps {
            for c in 0..k {
                sums[c] += s.class_norm_sums[c];
                counts[c] += s.class_counts[c];
            }
        }
        out.push(
            (0..k)
                .map(|c| (counts[c] > 0).then(|| sums[c] / counts[c] as f64))
                .collect(),
        );
    }
    Ok(out)
}
