//! Dataset ingestion and construction: IDX files, synthetic Gaussian blobs,
//! class imbalancing, and federated sharding.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::rng::RandomSource;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A supervised dataset: inputs `[N, ...]`, one class label per example,
/// and optional per-example metadata columns for subgroup auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Named per-example string attributes (e.g. a subgroup tag).
    pub metadata: BTreeMap<String, Vec<String>>,
    pub provenance: String,
}

impl LabeledDataset {
    pub fn new(
        inputs: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<LabeledDataset> {
        let n = *inputs
            .shape()
            .first()
            .ok_or_else(|| Error::shape("inputs need a leading example axis".to_string()))?;
        if n != labels.len() {
            return Err(Error::shape(format!(
                "{} inputs vs {} labels",
                n,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {} out of range [0,{})",
                bad, num_classes
            )));
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            num_classes,
            metadata: BTreeMap::new(),
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of examples in each class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Reinterpret every example under a new per-example shape.
    pub fn reshape_examples(mut self, shape: &[usize]) -> Result<LabeledDataset> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        self.inputs = self.inputs.reshape(full)?;
        Ok(self)
    }

    /// Copy the chosen examples (in the given order) into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let n = self.len();
        let per: usize = self.example_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= n {
                return Err(Error::invalid(format!("index {} of {}", i, n)));
            }
            data.extend_from_slice(&self.inputs.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = indices.len();
        let mut metadata = BTreeMap::new();
        for (key, col) in &self.metadata {
            metadata.insert(
                key.clone(),
                indices.iter().map(|&i| col[i].clone()).collect(),
            );
        }
        Ok(LabeledDataset {
            inputs: Tensor::new(shape, data)?,
            labels,
            num_classes: self.num_classes,
            metadata,
            provenance: self.provenance.clone(),
        })
    }

    /// Copy the chosen examples into a training batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let sub = self.subset(indices)?;
        Batch::new(sub.inputs, sub.labels)
    }

    pub fn full_batch(&self) -> Result<Batch> {
        Batch::new(self.inputs.clone(), self.labels.clone())
    }
}

fn read_u32_be(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("truncated file: missing {what}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Decode an IDX image/label file pair into a dataset with pixel values
/// scaled to `[0, 1]` and example shape `[rows * cols]`.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let mut img = std::io::BufReader::new(std::fs::File::open(images_path)?);
    let magic = read_u32_be(&mut img, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {:#010x}, want {:#010x}",
            magic, IDX_IMAGES_MAGIC
        )));
    }
    let count = read_u32_be(&mut img, "image count")? as usize;
    let rows = read_u32_be(&mut img, "image rows")? as usize;
    let cols = read_u32_be(&mut img, "image cols")? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    img.read_exact(&mut pixels)
        .map_err(|_| Error::Format("truncated image data".to_string()))?;

    let mut lab = std::io::BufReader::new(std::fs::File::open(labels_path)?);
    let magic = read_u32_be(&mut lab, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {:#010x}, want {:#010x}",
            magic, IDX_LABELS_MAGIC
        )));
    }
    let label_count = read_u32_be(&mut lab, "label count")? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let mut raw_labels = vec![0u8; label_count];
    lab.read_exact(&mut raw_labels)
        .map_err(|_| Error::Format("truncated label data".to_string()))?;

    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1);
    LabeledDataset::new(
        Tensor::new(vec![count, rows * cols], data)?,
        labels,
        num_classes,
        format!("idx:{}", images_path.display()),
    )
}

/// Encode raw bytes as an IDX image/label file pair (the exact inverse of
/// [`read_idx`]'s container format).
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    pixels: &[u8],
    rows: usize,
    cols: usize,
    labels: &[u8],
) -> Result<()> {
    if rows * cols == 0 || pixels.len() % (rows * cols) != 0 {
        return Err(Error::invalid(format!(
            "{} pixels is not a multiple of {}x{}",
            pixels.len(),
            rows,
            cols
        )));
    }
    let count = pixels.len() / (rows * cols);
    if count != labels.len() {
        return Err(Error::invalid(format!(
            "{} images vs {} labels",
            count,
            labels.len()
        )));
    }
    let mut img = std::io::BufWriter::new(std::fs::File::create(images_path)?);
    img.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    img.write_all(&(count as u32).to_be_bytes())?;
    img.write_all(&(rows as u32).to_be_bytes())?;
    img.write_all(&(cols as u32).to_be_bytes())?;
    img.write_all(pixels)?;
    img.flush()?;

    let mut lab = std::io::BufWriter::new(std::fs::File::create(labels_path)?);
    lab.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    lab.write_all(&(count as u32).to_be_bytes())?;
    lab.write_all(labels)?;
    lab.flush()?;
    Ok(())
}

/// Gaussian-blob classification data: class `c` is an isotropic unit blob
/// centered at a seed-determined direction scaled by `separation`.
/// Classes are emitted in order (class 0 first), so shuffle before batching.
pub fn make_synthetic(
    num_classes: usize,
    per_class: &[usize],
    input_dim: usize,
    separation: f64,
    rng: &mut RandomSource,
) -> Result<LabeledDataset> {
    if num_classes == 0 || per_class.len() != num_classes {
        return Err(Error::invalid(format!(
            "{} per-class counts for {} classes",
            per_class.len(),
            num_classes
        )));
    }
    if per_class.iter().any(|&c| c == 0) {
        return Err(Error::invalid("per-class counts must be positive".to_string()));
    }
    if input_dim == 0 {
        return Err(Error::invalid("input_dim must be positive".to_string()));
    }
    let mut centers = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut dir: Vec<f64> = (0..input_dim).map(|_| rng.gaussian()).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            dir[0] = 1.0;
        } else {
            for v in &mut dir {
                *v /= norm;
            }
        }
        for v in &mut dir {
            *v *= separation;
        }
        centers.push(dir);
    }
    let total: usize = per_class.iter().sum();
    let mut data = Vec::with_capacity(total * input_dim);
    let mut labels = Vec::with_capacity(total);
    for (c, &count) in per_class.iter().enumerate() {
        for _ in 0..count {
            for &ctr in &centers[c] {
                data.push(ctr + rng.gaussian());
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(
        Tensor::new(vec![total, input_dim], data)?,
        labels,
        num_classes,
        format!("synthetic(sep={separation})"),
    )
}

/// Deterministically hold out the last `test_per_class[c]` examples of each
/// class as a test set; everything else stays in the training split.
pub fn split_per_class(
    ds: &LabeledDataset,
    test_per_class: &[usize],
) -> Result<(LabeledDataset, LabeledDataset)> {
    if test_per_class.len() != ds.num_classes {
        return Err(Error::invalid(format!(
            "{} holdout counts for {} classes",
            test_per_class.len(),
            ds.num_classes
        )));
    }
    let counts = ds.class_counts();
    for (c, (&want, &have)) in test_per_class.iter().zip(&counts).enumerate() {
        if want >= have {
            return Err(Error::invalid(format!(
                "cannot hold out {want} of {have} examples of class {c}"
            )));
        }
    }
    let mut seen = vec![0usize; ds.num_classes];
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    // walk backwards so "last k of each class" is order-independent to count
    let mut is_test = vec![false; ds.len()];
    for i in (0..ds.len()).rev() {
        let c = ds.labels[i];
        if seen[c] < test_per_class[c] {
            seen[c] += 1;
            is_test[i] = true;
        }
    }
    for (i, &t) in is_test.iter().enumerate() {
        if t {
            test_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    let mut train = ds.subset(&train_idx)?;
    let mut test = ds.subset(&test_idx)?;
    train.provenance = format!("{}(train)", ds.provenance);
    test.provenance = format!("{}(test)", ds.provenance);
    Ok((train, test))
}

/// Down-sample one class, keeping every other example untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImbalanceSpec {
    pub target_class: usize,
    pub keep_count: usize,
}

/// Keep a seed-determined random subset of `keep_count` examples of the
/// target class; all other examples, and their relative order, survive.
pub fn imbalance(
    ds: &LabeledDataset,
    spec: ImbalanceSpec,
    rng: &mut RandomSource,
) -> Result<LabeledDataset> {
    if spec.target_class >= ds.num_classes {
        return Err(Error::invalid(format!(
            "target class {} of {}",
            spec.target_class, ds.num_classes
        )));
    }
    let targets: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.labels[i] == spec.target_class)
        .collect();
    if spec.keep_count > targets.len() {
        return Err(Error::invalid(format!(
            "keep {} of {} examples of class {}",
            spec.keep_count,
            targets.len(),
            spec.target_class
        )));
    }
    let chosen = rng.sample_without_replacement(targets.len(), spec.keep_count)?;
    let mut keep = vec![true; ds.len()];
    for &i in &targets {
        keep[i] = false;
    }
    for &c in &chosen {
        keep[targets[c]] = true;
    }
    let indices: Vec<usize> = (0..ds.len()).filter(|&i| keep[i]).collect();
    let mut out = ds.subset(&indices)?;
    out.provenance = format!(
        "{}+imbalance(class {} -> {})",
        ds.provenance, spec.target_class, spec.keep_count
    );
    Ok(out)
}

/// How to split a dataset across federated participants.
#[derive(Debug, Clone, PartialEq)]
pub enum ShardStrategy {
    /// Shuffle, then deal examples round-robin.
    Iid,
    /// Examples of `classes` go only to the first `holders` shards; all
    /// other examples are dealt to the remaining shards.
    ByGroup { classes: Vec<usize>, holders: usize },
}

/// Partition a dataset into `n` disjoint shards whose union is the input.
pub fn shard(
    ds: &LabeledDataset,
    n: usize,
    strategy: &ShardStrategy,
    rng: &mut RandomSource,
) -> Result<Vec<LabeledDataset>> {
    if n == 0 {
        return Err(Error::invalid("need at least one shard".to_string()));
    }
    if n > ds.len() {
        return Err(Error::invalid(format!(
            "{} shards for {} examples",
            n,
            ds.len()
        )));
    }
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); n];
    match strategy {
        ShardStrategy::Iid => {
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            rng.shuffle(&mut idx);
            for (pos, &i) in idx.iter().enumerate() {
                assignment[pos % n].push(i);
            }
        }
        ShardStrategy::ByGroup { classes, holders } => {
            let holders = *holders;
            if holders == 0 || holders >= n {
                return Err(Error::invalid(format!(
                    "{} group holders of {} shards",
                    holders, n
                )));
            }
            let mut grouped: Vec<usize> = Vec::new();
            let mut rest: Vec<usize> = Vec::new();
            for i in 0..ds.len() {
                if classes.contains(&ds.labels[i]) {
                    grouped.push(i);
                } else {
                    rest.push(i);
                }
            }
            if grouped.is_empty() {
                return Err(Error::invalid(
                    "no examples of the grouped classes present".to_string(),
                ));
            }
            rng.shuffle(&mut grouped);
            rng.shuffle(&mut rest);
            for (pos, &i) in grouped.iter().enumerate() {
                assignment[pos % holders].push(i);
            }
            for (pos, &i) in rest.iter().enumerate() {
                assignment[holders + pos % (n - holders)].push(i);
            }
        }
    }
    if assignment.iter().any(|a| a.is_empty()) {
        return Err(Error::invalid(
            "sharding produced an empty shard; use fewer participants".to_string(),
        ));
    }
    assignment
        .into_iter()
        .enumerate()
        .map(|(si, mut idx)| {
            idx.sort_unstable();
            let mut s = ds.subset(&idx)?;
            s.provenance = format!("{}#shard{}", ds.provenance, si);
            Ok(s)
        })
        .collect()
}
