//! Small supervised classifiers: MLPs with optional 2-D convolution and
//! max-pooling, softmax cross-entropy loss, whole-batch gradients and
//! per-example gradients.
//!
//! Parameters live in a single flat [`ParamVector`] so optimizers, clipping
//! and noise treat the model as one Euclidean vector; the layout maps layer
//! indices to slices of that vector.

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::tensor::{dot, Tensor};

/// One layer of a feed-forward classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Fully connected `[input] -> [output]`, weights stored `[input, output]`.
    Linear { input: usize, output: usize },
    ReLU,
    /// Valid (unpadded) 2-D convolution over `[channels, height, width]`.
    Conv2D {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Non-overlapping max pooling with a square window.
    MaxPool2D { size: usize },
    Flatten,
}

impl Layer {
    fn param_lens(&self) -> (usize, usize) {
        match *self {
            Layer::Linear { input, output } => (input * output, output),
            Layer::Conv2D {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            _ => (0, 0),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Linear { input, .. } => input,
            Layer::Conv2D {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            _ => 0,
        }
    }

    /// Output shape for a given per-example input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            Layer::Linear {
                input: d, output: o, ..
            } => {
                if input != [d] {
                    return Err(Error::ModelSpec(format!(
                        "linear expects [{}], got {:?}",
                        d, input
                    )));
                }
                Ok(vec![o])
            }
            Layer::ReLU => Ok(input.to_vec()),
            Layer::Conv2D {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let [c, h, w] = match input {
                    [c, h, w] => [*c, *h, *w],
                    other => {
                        return Err(Error::ModelSpec(format!(
                            "conv expects [c,h,w], got {:?}",
                            other
                        )))
                    }
                };
                if c != in_channels {
                    return Err(Error::ModelSpec(format!(
                        "conv expects {} channels, got {}",
                        in_channels, c
                    )));
                }
                if stride == 0 || kernel == 0 || h < kernel || w < kernel {
                    return Err(Error::ModelSpec(format!(
                        "conv kernel {}x{} stride {} does not fit {}x{}",
                        kernel, kernel, stride, h, w
                    )));
                }
                let oh = (h - kernel) / stride + 1;
                let ow = (w - kernel) / stride + 1;
                Ok(vec![out_channels, oh, ow])
            }
            Layer::MaxPool2D { size } => {
                let [c, h, w] = match input {
                    [c, h, w] => [*c, *h, *w],
                    other => {
                        return Err(Error::ModelSpec(format!(
                            "maxpool expects [c,h,w], got {:?}",
                            other
                        )))
                    }
                };
                if size == 0 || h < size || w < size {
                    return Err(Error::ModelSpec(format!(
                        "maxpool {}x{} does not fit {}x{}",
                        size, size, h, w
                    )));
                }
                Ok(vec![c, h / size, w / size])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Ordered layer stack plus the input/output contract.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<Layer>,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    /// Plain MLP: `input_dim -> hidden[0] -> ... -> num_classes` with ReLU
    /// between linear layers.
    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(Layer::Linear { input: prev, output: h });
            layers.push(Layer::ReLU);
            prev = h;
        }
        layers.push(Layer::Linear { input: prev, output: num_classes });
        ModelSpec {
            layers,
            input_shape: vec![input_dim],
            num_classes,
        }
    }

    /// Two-conv / two-linear reference classifier for 28x28 single-channel
    /// images, 431,080 parameters.
    pub fn reference_convnet() -> Self {
        ModelSpec {
            layers: vec![
                Layer::Conv2D { in_channels: 1, out_channels: 20, kernel: 5, stride: 1 },
                Layer::ReLU,
                Layer::MaxPool2D { size: 2 },
                Layer::Conv2D { in_channels: 20, out_channels: 50, kernel: 5, stride: 1 },
                Layer::ReLU,
                Layer::MaxPool2D { size: 2 },
                Layer::Flatten,
                Layer::Linear { input: 800, output: 500 },
                Layer::ReLU,
                Layer::Linear { input: 500, output: 10 },
            ],
            input_shape: vec![1, 28, 28],
            num_classes: 10,
        }
    }

    /// Per-example shape after every layer: `chain[0]` is the input shape,
    /// `chain[i+1]` the output of layer `i`. Errors if layers do not chain
    /// or the final shape is not `[num_classes]`.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>> {
        let mut chain = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(chain.last().unwrap())?;
            chain.push(next);
        }
        if chain.last().unwrap().as_slice() != [self.num_classes] {
            return Err(Error::ModelSpec(format!(
                "final shape {:?} != [{}]",
                chain.last().unwrap(),
                self.num_classes
            )));
        }
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape_chain().map(|_| ())
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let (w, b) = l.param_lens();
                w + b
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ParamSlice {
    offset: usize,
    weight_len: usize,
    bias_len: usize,
}

/// Flattened model parameters with a per-layer slice map.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Tensor,
    slices: Vec<ParamSlice>,
}

impl ParamVector {
    pub fn zeros_for(spec: &ModelSpec) -> ParamVector {
        let mut slices = Vec::with_capacity(spec.layers.len());
        let mut offset = 0;
        for layer in &spec.layers {
            let (w, b) = layer.param_lens();
            slices.push(ParamSlice { offset, weight_len: w, bias_len: b });
            offset += w + b;
        }
        ParamVector {
            values: Tensor::zeros(vec![offset]),
            slices,
        }
    }

    /// Rebuild a parameter vector from flat values (e.g. parsed from disk).
    pub fn from_values(spec: &ModelSpec, values: Tensor) -> Result<ParamVector> {
        let mut pv = ParamVector::zeros_for(spec);
        if values.len() != pv.values.len() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                pv.values.len(),
                values.len()
            )));
        }
        pv.values = values.reshape(vec![pv.values.len()])?;
        Ok(pv)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Tensor {
        &mut self.values
    }

    pub fn l2_norm(&self) -> Result<f64> {
        self.values.l2_norm()
    }

    /// Weight and bias slices of layer `li`.
    pub fn layer(&self, li: usize) -> (&[f64], &[f64]) {
        let s = self.slices[li];
        let data = self.values.data();
        (
            &data[s.offset..s.offset + s.weight_len],
            &data[s.offset + s.weight_len..s.offset + s.weight_len + s.bias_len],
        )
    }

    fn layer_mut(&mut self, li: usize) -> (&mut [f64], &mut [f64]) {
        let s = self.slices[li];
        let data = self.values.data_mut();
        let (_, rest) = data.split_at_mut(s.offset);
        let (w, rest) = rest.split_at_mut(s.weight_len);
        (w, &mut rest[..s.bias_len])
    }
}

/// A batch of examples: inputs `[b, ...input_shape]` and class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Batch> {
        let b = *inputs
            .shape()
            .first()
            .ok_or_else(|| Error::shape("batch inputs must be at least 1-D".to_string()))?;
        if b != labels.len() {
            return Err(Error::shape(format!(
                "{} input rows vs {} labels",
                b,
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Initialize parameters: weights uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`,
/// biases zero. Deterministic under the given source.
pub fn init_params(spec: &ModelSpec, rng: &mut RandomSource) -> Result<ParamVector> {
    spec.validate()?;
    let mut params = ParamVector::zeros_for(spec);
    for (li, layer) in spec.layers.iter().enumerate() {
        let fan_in = layer.fan_in();
        if fan_in == 0 {
            continue;
        }
        let bound = 1.0 / (fan_in as f64).sqrt();
        let (weights, _biases) = params.layer_mut(li);
        for w in weights {
            *w = rng.uniform(-bound, bound);
        }
    }
    Ok(params)
}

fn batch_size_of(inputs: &Tensor) -> Result<usize> {
    inputs
        .shape()
        .first()
        .copied()
        .ok_or_else(|| Error::shape("inputs must carry a batch dimension".to_string()))
}

struct ForwardCache {
    /// `acts[0]` is the batch input, `acts[i+1]` the output of layer `i`.
    acts: Vec<Tensor>,
    /// For each MaxPool layer: winning input index per output element.
    pool_argmax: Vec<Option<Vec<usize>>>,
}

fn forward_cached(spec: &ModelSpec, params: &ParamVector, inputs: &Tensor) -> Result<ForwardCache> {
    let chain = spec.shape_chain()?;
    let b = batch_size_of(inputs)?;
    if inputs.shape()[1..] != chain[0] {
        return Err(Error::shape(format!(
            "inputs {:?} vs expected per-example shape {:?}",
            &inputs.shape()[1..],
            chain[0]
        )));
    }
    if params.values.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite parameter".to_string()));
    }

    let mut acts: Vec<Tensor> = vec![inputs.clone()];
    let mut pool_argmax: Vec<Option<Vec<usize>>> = Vec::with_capacity(spec.layers.len());

    for (li, layer) in spec.layers.iter().enumerate() {
        let x = acts.last().unwrap();
        let (out, argmax) = match *layer {
            Layer::Linear { input: d, output: o } => {
                let (weights, biases) = params.layer(li);
                let xd = x.data();
                let mut out = vec![0.0; b * o];
                for bi in 0..b {
                    let row = &xd[bi * d..(bi + 1) * d];
                    let out_row = &mut out[bi * o..(bi + 1) * o];
                    out_row.copy_from_slice(biases);
                    for (di, &v) in row.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let wrow = &weights[di * o..(di + 1) * o];
                        for (acc, &w) in out_row.iter_mut().zip(wrow) {
                            *acc += v * w;
                        }
                    }
                }
                (Tensor::new(vec![b, o], out)?, None)
            }
            Layer::ReLU => {
                let out = x.data().iter().map(|&v| v.max(0.0)).collect();
                (Tensor::new(x.shape().to_vec(), out)?, None)
            }
            Layer::Conv2D {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let oshape = chain[li + 1].clone();
                let (oc, oh, ow) = (oshape[0], oshape[1], oshape[2]);
                let (h, w) = (chain[li][1], chain[li][2]);
                debug_assert_eq!(oc, out_channels);
                let (weights, biases) = params.layer(li);
                let xd = x.data();
                let mut out = vec![0.0; b * oc * oh * ow];
                let in_plane = h * w;
                let out_plane = oh * ow;
                for bi in 0..b {
                    let x_base = bi * in_channels * in_plane;
                    let o_base = bi * oc * out_plane;
                    for o in 0..oc {
                        let w_base = o * in_channels * kernel * kernel;
                        let bias = biases[o];
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut acc = bias;
                                for c in 0..in_channels {
                                    let xc = x_base + c * in_plane;
                                    let wc = w_base + c * kernel * kernel;
                                    for i in 0..kernel {
                                        let xr = xc + (y * stride + i) * w + xx * stride;
                                        let wr = wc + i * kernel;
                                        acc += dot(&xd[xr..xr + kernel], &weights[wr..wr + kernel]);
                                    }
                                }
                                out[o_base + o * out_plane + y * ow + xx] = acc;
                            }
                        }
                    }
                }
                (Tensor::new(vec![b, oc, oh, ow], out)?, None)
            }
            Layer::MaxPool2D { size } => {
                let ish = &chain[li];
                let (c, h, w) = (ish[0], ish[1], ish[2]);
                let (oh, ow) = (h / size, w / size);
                let xd = x.data();
                let mut out = vec![0.0; b * c * oh * ow];
                let mut argmax = vec![0usize; b * c * oh * ow];
                let in_plane = h * w;
                let out_plane = oh * ow;
                for bi in 0..b {
                    for ci in 0..c {
                        let x_base = bi * c * in_plane + ci * in_plane;
                        let o_base = bi * c * out_plane + ci * out_plane;
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                let mut best_idx = 0;
                                for i in 0..size {
                                    for j in 0..size {
                                        let idx = x_base + (y * size + i) * w + (xx * size + j);
                                        // strict > keeps the first (lowest-index) max
                                        if xd[idx] > best {
                                            best = xd[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                                out[o_base + y * ow + xx] = best;
                                argmax[o_base + y * ow + xx] = best_idx;
                            }
                        }
                    }
                }
                (Tensor::new(vec![b, c, oh, ow], out)?, Some(argmax))
            }
            Layer::Flatten => {
                let flat: usize = chain[li + 1][0];
                (x.clone().reshape(vec![b, flat])?, None)
            }
        };
        pool_argmax.push(argmax);
        acts.push(out);
    }
    Ok(ForwardCache { acts, pool_argmax })
}

/// Logits `[b, num_classes]` for a batch of inputs.
pub fn forward(spec: &ModelSpec, params: &ParamVector, inputs: &Tensor) -> Result<Tensor> {
    let cache = forward_cached(spec, params, inputs)?;
    Ok(cache.acts.into_iter().last().unwrap())
}

/// Backward pass from d(loss)/d(logits), accumulating into `grad`.
fn backward(
    spec: &ModelSpec,
    params: &ParamVector,
    cache: &ForwardCache,
    dlogits: Tensor,
    grad: &mut ParamVector,
) -> Result<()> {
    let mut dy = dlogits;
    for li in (0..spec.layers.len()).rev() {
        let x = &cache.acts[li];
        let b = x.shape()[0];
        dy = match spec.layers[li] {
            Layer::Linear { input: d, output: o } => {
                let xd = x.data();
                let dyd = dy.data();
                {
                    let (dw, db) = grad.layer_mut(li);
                    for bi in 0..b {
                        let xrow = &xd[bi * d..(bi + 1) * d];
                        let dyrow = &dyd[bi * o..(bi + 1) * o];
                        for (acc, &g) in db.iter_mut().zip(dyrow) {
                            *acc += g;
                        }
                        for (di, &v) in xrow.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let drow = &mut dw[di * o..(di + 1) * o];
                            for (acc, &g) in drow.iter_mut().zip(dyrow) {
                                *acc += v * g;
                            }
                        }
                    }
                }
                let (weights, _) = params.layer(li);
                let mut dx = vec![0.0; b * d];
                for bi in 0..b {
                    let dyrow = &dyd[bi * o..(bi + 1) * o];
                    let dxrow = &mut dx[bi * d..(bi + 1) * d];
                    for (di, acc) in dxrow.iter_mut().enumerate() {
                        *acc = dot(dyrow, &weights[di * o..(di + 1) * o]);
                    }
                }
                Tensor::new(x.shape().to_vec(), dx)?
            }
            Layer::ReLU => {
                let data = x
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            Layer::Conv2D {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let ish = &x.shape()[1..];
                let (h, w) = (ish[1], ish[2]);
                let osh = &dy.shape()[1..];
                let (oh, ow) = (osh[1], osh[2]);
                let xd = x.data();
                let dyd = dy.data();
                let in_plane = h * w;
                let out_plane = oh * ow;
                {
                    let (dw, db) = grad.layer_mut(li);
                    for bi in 0..b {
                        let x_base = bi * in_channels * in_plane;
                        let o_base = bi * out_channels * out_plane;
                        for o in 0..out_channels {
                            let w_base = o * in_channels * kernel * kernel;
                            for y in 0..oh {
                                for xx in 0..ow {
                                    let g = dyd[o_base + o * out_plane + y * ow + xx];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    db[o] += g;
                                    for c in 0..in_channels {
                                        let xc = x_base + c * in_plane;
                                        let wc = w_base + c * kernel * kernel;
                                        for i in 0..kernel {
                                            let xr = xc + (y * stride + i) * w + xx * stride;
                                            let wr = wc + i * kernel;
                                            for j in 0..kernel {
                                                dw[wr + j] += g * xd[xr + j];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let (weights, _) = params.layer(li);
                let mut dx = vec![0.0; b * in_channels * in_plane];
                for bi in 0..b {
                    let x_base = bi * in_channels * in_plane;
                    let o_base = bi * out_channels * out_plane;
                    for o in 0..out_channels {
                        let w_base = o * in_channels * kernel * kernel;
                        for y in 0..oh {
                            for xx in 0..ow {
                                let g = dyd[o_base + o * out_plane + y * ow + xx];
                                if g == 0.0 {
                                    continue;
                                }
                                for c in 0..in_channels {
                                    let xc = x_base + c * in_plane;
                                    let wc = w_base + c * kernel * kernel;
                                    for i in 0..kernel {
                                        let xr = xc + (y * stride + i) * w + xx * stride;
                                        let wr = wc + i * kernel;
                                        for j in 0..kernel {
                                            dx[xr + j] += g * weights[wr + j];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Tensor::new(x.shape().to_vec(), dx)?
            }
            Layer::MaxPool2D { .. } => {
                let argmax = cache.pool_argmax[li]
                    .as_ref()
                    .expect("pool cache present for MaxPool2D");
                let mut dx = vec![0.0; x.len()];
                for (&idx, &g) in argmax.iter().zip(dy.data()) {
                    dx[idx] += g;
                }
                Tensor::new(x.shape().to_vec(), dx)?
            }
            Layer::Flatten => dy.reshape(x.shape().to_vec())?,
        };
    }
    Ok(())
}

/// Per-example softmax cross-entropy losses and d(sum of losses)/d(logits).
///
/// `scale` multiplies the gradient (1/b for a mean-reduced batch, 1 for a
/// single example).
fn softmax_ce(logits: &Tensor, labels: &[usize], k: usize, scale: f64) -> Result<(Vec<f64>, Tensor)> {
    let (b, width) = logits.dims2("logits")?;
    if width != k {
        return Err(Error::shape(format!("{} logit columns vs {} classes", width, k)));
    }
    let mut losses = Vec::with_capacity(b);
    let mut dl = vec![0.0; b * k];
    let ld = logits.data();
    for bi in 0..b {
        let label = labels[bi];
        if label >= k {
            return Err(Error::invalid(format!("label {} out of range [0,{})", label, k)));
        }
        let row = &ld[bi * k..(bi + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        losses.push(lse - row[label]);
        let drow = &mut dl[bi * k..(bi + 1) * k];
        for (j, (&v, g)) in row.iter().zip(drow.iter_mut()).enumerate() {
            let p = (v - lse).exp();
            *g = scale * (p - if j == label { 1.0 } else { 0.0 });
        }
    }
    Ok((losses, Tensor::new(vec![b, k], dl)?))
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// parameters.
pub fn loss_and_grad(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch".to_string()));
    }
    let b = batch.len();
    let cache = forward_cached(spec, params, &batch.inputs)?;
    let logits = cache.acts.last().unwrap();
    let (losses, dlogits) = softmax_ce(logits, &batch.labels, spec.num_classes, 1.0 / b as f64)?;
    let loss = losses.iter().sum::<f64>() / b as f64;
    let mut grad = ParamVector::zeros_for(spec);
    backward(spec, params, &cache, dlogits, &mut grad)?;
    Ok((loss, grad))
}

/// Gradient of the single-example loss, written into `grad` (zeroed first).
/// Returns the example loss. `example` must be a 1-example batch.
pub(crate) fn single_example_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: &Tensor,
    label: usize,
    grad: &mut ParamVector,
) -> Result<f64> {
    grad.values_mut().data_mut().fill(0.0);
    let cache = forward_cached(spec, params, inputs)?;
    let logits = cache.acts.last().unwrap();
    let (losses, dlogits) = softmax_ce(logits, &[label], spec.num_classes, 1.0)?;
    backward(spec, params, &cache, dlogits, grad)?;
    Ok(losses[0])
}

/// Copy example `i` of a batch tensor into a 1-example tensor.
pub(crate) fn example_row(inputs: &Tensor, i: usize) -> Result<Tensor> {
    let b = batch_size_of(inputs)?;
    if i >= b {
        return Err(Error::invalid(format!("example {} of {}", i, b)));
    }
    let per = inputs.len() / b;
    let mut shape = inputs.shape().to_vec();
    shape[0] = 1;
    Tensor::new(shape, inputs.data()[i * per..(i + 1) * per].to_vec())
}

/// Gradient of each example's own loss, in batch order.
pub fn per_example_grads(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Vec<ParamVector>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch".to_string()));
    }
    let mut grads = Vec::with_capacity(batch.len());
    let mut scratch = ParamVector::zeros_for(spec);
    for i in 0..batch.len() {
        let x = example_row(&batch.inputs, i)?;
        single_example_grad(spec, params, &x, batch.labels[i], &mut scratch)?;
        grads.push(scratch.clone());
    }
    Ok(grads)
}

/// Argmax class per input row; ties break toward the lowest class index.
pub fn predict(spec: &ModelSpec, params: &ParamVector, inputs: &Tensor) -> Result<Vec<usize>> {
    let logits = forward(spec, params, inputs)?;
    let (b, k) = logits.dims2("logits")?;
    let mut out = Vec::with_capacity(b);
    let data = logits.data();
    for bi in 0..b {
        let row = &data[bi * k..(bi + 1) * k];
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_close(a: f64, b: f64, rel: f64, abs_floor: f64) -> bool {
        let diff = (a - b).abs();
        diff <= abs_floor || diff <= rel * a.abs().max(b.abs())
    }

    #[test]
    fn linear_2x2_has_six_params() {
        let spec = ModelSpec {
            layers: vec![Layer::Linear { input: 2, output: 2 }],
            input_shape: vec![2],
            num_classes: 2,
        };
        assert_eq!(spec.param_count(), 6);
    }

    #[test]
    fn reference_convnet_param_count() {
        let spec = ModelSpec::reference_convnet();
        spec.validate().unwrap();
        let p = spec.param_count();
        assert_eq!(p, 431_080);
        assert!((425_000..=437_000).contains(&p));
    }

    #[test]
    fn invalid_chaining_is_spec_error() {
        let spec = ModelSpec {
            layers: vec![
                Layer::Linear { input: 4, output: 3 },
                Layer::Linear { input: 5, output: 2 },
            ],
            input_shape: vec![4],
            num_classes: 2,
        };
        assert!(matches!(spec.validate(), Err(Error::ModelSpec(_))));
        let mut rng = RandomSource::new(0, 0);
        assert!(init_params(&spec, &mut rng).is_err());
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let spec = ModelSpec::mlp(4, &[3], 2);
        let a = init_params(&spec, &mut RandomSource::new(7, 2)).unwrap();
        let b = init_params(&spec, &mut RandomSource::new(7, 2)).unwrap();
        assert_eq!(a, b);
        let (_, biases) = a.layer(0);
        assert!(biases.iter().all(|&x| x == 0.0));
        // fan-in bound respected
        let (w, _) = a.layer(0);
        assert!(w.iter().all(|&x| x.abs() <= 0.5));
    }

    #[test]
    fn zero_params_give_uniform_softmax() {
        let spec = ModelSpec::mlp(3, &[], 4);
        let params = ParamVector::zeros_for(&spec);
        let inputs = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 0.0, 1.0]).unwrap();
        let logits = forward(&spec, &params, &inputs).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let sm = logits.row_softmax().unwrap();
        assert!(sm.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn identity_linear_passes_inputs_through() {
        let spec = ModelSpec {
            layers: vec![Layer::Linear { input: 3, output: 3 }],
            input_shape: vec![3],
            num_classes: 3,
        };
        let mut params = ParamVector::zeros_for(&spec);
        {
            let (w, _) = params.layer_mut(0);
            for i in 0..3 {
                w[i * 3 + i] = 1.0;
            }
        }
        let inputs = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let logits = forward(&spec, &params, &inputs).unwrap();
        assert_eq!(logits.data(), inputs.data());
    }

    #[test]
    fn nan_params_are_numeric_error() {
        let spec = ModelSpec::mlp(2, &[], 2);
        let mut params = ParamVector::zeros_for(&spec);
        params.values_mut().data_mut()[0] = f64::NAN;
        let inputs = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            forward(&spec, &params, &inputs),
            Err(Error::NumericDomain(_))
        ));
    }

    /// Independent straight-line oracle: a hand-rolled fixed 3-layer MLP
    /// forward with explicit loops, no shared code with `forward`.
    #[test]
    fn forward_matches_straight_line_oracle() {
        let spec = ModelSpec::mlp(4, &[5, 3], 2);
        let mut rng = RandomSource::new(11, 0);
        let params = init_params(&spec, &mut rng).unwrap();
        let x: Vec<f64> = (0..4).map(|i| 0.3 * i as f64 - 0.5).collect();

        let (w1, b1) = params.layer(0);
        let (w2, b2) = params.layer(2);
        let (w3, b3) = params.layer(4);
        let mut h1 = b1.to_vec();
        for (di, &v) in x.iter().enumerate() {
            for j in 0..5 {
                h1[j] += v * w1[di * 5 + j];
            }
        }
        for v in &mut h1 {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mut h2 = b2.to_vec();
        for (di, &v) in h1.iter().enumerate() {
            for j in 0..3 {
                h2[j] += v * w2[di * 3 + j];
            }
        }
        for v in &mut h2 {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mut expect = b3.to_vec();
        for (di, &v) in h2.iter().enumerate() {
            for j in 0..2 {
                expect[j] += v * w3[di * 2 + j];
            }
        }

        let inputs = Tensor::new(vec![1, 4], x).unwrap();
        let logits = forward(&spec, &params, &inputs).unwrap();
        for (a, e) in logits.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-10, "{a} vs {e}");
        }
    }

    #[test]
    fn zero_logits_loss_is_ln2_and_dlogits_half() {
        let spec = ModelSpec::mlp(2, &[], 2);
        let params = ParamVector::zeros_for(&spec);
        let batch = Batch::new(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap(), vec![0]).unwrap();
        let (loss, _) = loss_and_grad(&spec, &params, &batch).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);

        let logits = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let (_, dl) = softmax_ce(&logits, &[0], 2, 1.0).unwrap();
        assert!((dl.data()[0] + 0.5).abs() < 1e-15);
        assert!((dl.data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_rejected() {
        let spec = ModelSpec::mlp(2, &[], 2);
        let params = ParamVector::zeros_for(&spec);
        let batch = Batch {
            inputs: Tensor::zeros(vec![0, 2]),
            labels: vec![],
        };
        assert!(matches!(
            loss_and_grad(&spec, &params, &batch),
            Err(Error::InvalidArgument(_))
        ));
        assert!(per_example_grads(&spec, &params, &batch).is_err());
    }

    fn fd_check(spec: &ModelSpec, seed: u64, b: usize) {
        assert!(spec.param_count() <= 500, "oracle is for small models");
        let mut rng = RandomSource::new(seed, 0);
        let mut params = init_params(spec, &mut rng).unwrap();
        // random biases too, so every coordinate is exercised
        for v in params.values_mut().data_mut() {
            if *v == 0.0 {
                *v = rng.uniform(-0.1, 0.1);
            }
        }
        let in_per: usize = spec.input_shape.iter().product();
        let mut shape = vec![b];
        shape.extend_from_slice(&spec.input_shape);
        let inputs = Tensor::new(
            shape,
            (0..b * in_per).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..b).map(|i| i % spec.num_classes).collect();
        let batch = Batch::new(inputs, labels).unwrap();

        let (_, grad) = loss_and_grad(spec, &params, &batch).unwrap();
        let h = 1e-5;
        for ci in 0..params.len() {
            let orig = params.values().data()[ci];
            params.values_mut().data_mut()[ci] = orig + h;
            let (lp, _) = loss_and_grad(spec, &params, &batch).unwrap();
            params.values_mut().data_mut()[ci] = orig - h;
            let (lm, _) = loss_and_grad(spec, &params, &batch).unwrap();
            params.values_mut().data_mut()[ci] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grad.values().data()[ci];
            assert!(
                rel_close(fd, an, 1e-5, 1e-8),
                "coord {ci}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn finite_differences_mlp() {
        fd_check(&ModelSpec::mlp(6, &[8, 5], 3), 3, 4);
    }

    #[test]
    fn finite_differences_convnet_layers() {
        // exercises Conv2D, ReLU, MaxPool2D, Flatten and Linear together
        let spec = ModelSpec {
            layers: vec![
                Layer::Conv2D { in_channels: 1, out_channels: 2, kernel: 3, stride: 1 },
                Layer::ReLU,
                Layer::MaxPool2D { size: 2 },
                Layer::Flatten,
                Layer::Linear { input: 2 * 2 * 2, output: 3 },
            ],
            input_shape: vec![1, 6, 6],
            num_classes: 3,
        };
        assert_eq!(spec.param_count(), 2 * 9 + 2 + 8 * 3 + 3);
        fd_check(&spec, 5, 3);
    }

    #[test]
    fn finite_differences_strided_conv() {
        let spec = ModelSpec {
            layers: vec![
                Layer::Conv2D { in_channels: 2, out_channels: 3, kernel: 2, stride: 2 },
                Layer::ReLU,
                Layer::Flatten,
                Layer::Linear { input: 3 * 3 * 3, output: 2 },
            ],
            input_shape: vec![2, 6, 6],
            num_classes: 2,
        };
        fd_check(&spec, 8, 2);
    }

    #[test]
    fn single_example_batch_matches_batch_grad() {
        let spec = ModelSpec::mlp(5, &[4], 3);
        let mut rng = RandomSource::new(2, 0);
        let params = init_params(&spec, &mut rng).unwrap();
        let inputs = Tensor::new(vec![1, 5], (0..5).map(|i| i as f64 * 0.2).collect()).unwrap();
        let batch = Batch::new(inputs, vec![1]).unwrap();
        let (_, grad) = loss_and_grad(&spec, &params, &batch).unwrap();
        let per = per_example_grads(&spec, &params, &batch).unwrap();
        assert_eq!(per.len(), 1);
        for (a, b) in per[0].values().data().iter().zip(grad.values().data()) {
            assert!(rel_close(*a, *b, 1e-12, 1e-15));
        }
    }

    #[test]
    fn identical_examples_give_identical_grads() {
        let spec = ModelSpec::mlp(3, &[4], 2);
        let mut rng = RandomSource::new(4, 0);
        let params = init_params(&spec, &mut rng).unwrap();
        let row = vec![0.3, -0.7, 1.1];
        let mut data = row.clone();
        data.extend_from_slice(&row);
        let batch = Batch::new(Tensor::new(vec![2, 3], data).unwrap(), vec![1, 1]).unwrap();
        let per = per_example_grads(&spec, &params, &batch).unwrap();
        assert_eq!(per[0], per[1]);
    }

    #[test]
    fn per_example_mean_matches_batch_grad_on_random_cases() {
        let mut rng = RandomSource::new(99, 0);
        for case in 0..100 {
            let hidden = 2 + (case % 4);
            let spec = ModelSpec::mlp(4, &[hidden], 3);
            let params = init_params(&spec, &mut rng).unwrap();
            let b = 1 + (case % 5);
            let inputs = Tensor::new(
                vec![b, 4],
                (0..b * 4).map(|_| rng.uniform(-2.0, 2.0)).collect(),
            )
            .unwrap();
            let labels: Vec<usize> = (0..b).map(|_| rng.next_index(3)).collect();
            let batch = Batch::new(inputs, labels).unwrap();
            let (_, batch_grad) = loss_and_grad(&spec, &params, &batch).unwrap();
            let per = per_example_grads(&spec, &params, &batch).unwrap();
            let mut mean = ParamVector::zeros_for(&spec);
            for g in &per {
                mean.values_mut().axpy(1.0 / b as f64, g.values()).unwrap();
            }
            for (m, g) in mean.values().data().iter().zip(batch_grad.values().data()) {
                assert!(
                    rel_close(*m, *g, 1e-10, 1e-14),
                    "case {case}: {m} vs {g}"
                );
            }
        }
    }

    #[test]
    fn loss_decreases_on_separable_toy_problem() {
        // 4 separable points in 2-D, 5 full-batch steps at lr 0.01
        let spec = ModelSpec::mlp(2, &[], 2);
        let mut rng = RandomSource::new(6, 0);
        let mut params = init_params(&spec, &mut rng).unwrap();
        let batch = Batch::new(
            Tensor::new(
                vec![4, 2],
                vec![2.0, 0.1, 1.5, -0.2, -2.0, 0.2, -1.7, -0.1],
            )
            .unwrap(),
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..5 {
            let (loss, grad) = loss_and_grad(&spec, &params, &batch).unwrap();
            assert!(loss >= 0.0);
            assert!(loss < prev, "loss {loss} did not decrease from {prev}");
            prev = loss;
            params.values_mut().axpy(-0.01, grad.values()).unwrap();
        }
    }

    #[test]
    fn trained_toy_model_reaches_full_train_accuracy() {
        let spec = ModelSpec::mlp(2, &[], 2);
        let mut rng = RandomSource::new(6, 0);
        let mut params = init_params(&spec, &mut rng).unwrap();
        let batch = Batch::new(
            Tensor::new(
                vec![4, 2],
                vec![2.0, 0.1, 1.5, -0.2, -2.0, 0.2, -1.7, -0.1],
            )
            .unwrap(),
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let mut loss = f64::INFINITY;
        for _ in 0..500 {
            let (l, grad) = loss_and_grad(&spec, &params, &batch).unwrap();
            loss = l;
            params.values_mut().axpy(-0.5, grad.values()).unwrap();
        }
        assert!(loss < 0.01, "converged loss {loss}");
        let preds = predict(&spec, &params, &batch.inputs).unwrap();
        assert_eq!(preds, vec![0, 0, 1, 1]);
    }

    #[test]
    fn predict_breaks_ties_toward_lowest_index() {
        let spec = ModelSpec::mlp(2, &[], 2);
        let params = ParamVector::zeros_for(&spec);
        // zero params -> all logits zero -> tie -> class 0
        let inputs = Tensor::new(vec![3, 2], vec![1.0, 2.0, -1.0, 0.5, 0.0, 0.0]).unwrap();
        assert_eq!(predict(&spec, &params, &inputs).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn predict_invariant_under_constant_logit_shift() {
        // shifting all logits of a row by a constant = adding the constant
        // to every output bias, which cannot change the argmax
        let spec = ModelSpec::mlp(3, &[], 4);
        let mut rng = RandomSource::new(12, 0);
        let params = init_params(&spec, &mut rng).unwrap();
        let mut shifted = params.clone();
        {
            let (_, biases) = shifted.layer_mut(0);
            for v in biases {
                *v += 3.5;
            }
        }
        let inputs = Tensor::new(
            vec![8, 3],
            (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        assert_eq!(
            predict(&spec, &params, &inputs).unwrap(),
            predict(&spec, &shifted, &inputs).unwrap()
        );
    }
}
