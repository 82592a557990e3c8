//! Dense multilayer perceptron with explicit backpropagation.
//!
//! Parameters are laid out flat, layer by layer: the `n_in × n_out`
//! weight matrix in row-major order followed by the `n_out` biases. A
//! [`ParamVector`] of gradients uses the same layout, which is what the
//! aggregation kernels operate on.

use std::ops::{Index, IndexMut};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat vector of parameters or gradient components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.0.iter_mut() {
            *a *= alpha;
        }
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

/// Hidden-layer nonlinearity. The output layer is always linear (logits).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the derivative, given pre-activation `z` and
    /// post-activation `a`.
    fn backprop(self, grad: &mut Array2<f64>, z: &Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Relu => ndarray::Zip::from(grad).and(z).for_each(|g, &zv| {
                if zv <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => {
                ndarray::Zip::from(grad)
                    .and(a)
                    .for_each(|g, &av| *g *= 1.0 - av * av);
            }
            Activation::Identity => {}
        }
    }
}

/// A mini-batch: row-major inputs, observed labels and stable example ids.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub ids: Vec<u64>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, ids: Vec<u64>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Data("batch must contain at least one example".into()));
        }
        if labels.len() != inputs.nrows() || ids.len() != inputs.nrows() {
            return Err(Error::Data(format!(
                "batch has {} input rows, {} labels and {} ids",
                inputs.nrows(),
                labels.len(),
                ids.len()
            )));
        }
        Ok(Batch {
            inputs,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Contiguous sub-batch of rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Batch {
        Batch {
            inputs: self.inputs.slice(s![start..end, ..]).to_owned(),
            labels: self.labels[start..end].to_vec(),
            ids: self.ids[start..end].to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    PerExample,
    BatchMean,
}

#[derive(Clone, Debug)]
pub enum Grads {
    PerExample(Vec<ParamVector>),
    BatchMean(ParamVector),
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

/// Fully connected classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activation: Activation,
    seed: u64,
    layers: Vec<Dense>,
}

/// Serializable snapshot of an [`Mlp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpState {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub params: ParamVector,
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "need at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&n| n == 0) {
        return Err(Error::Config(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, seeded.
    pub fn new(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((n_in, n_out), |_| rng.random_range(-limit..=limit));
                Dense {
                    weights,
                    bias: Array1::zeros(n_out),
                }
            })
            .collect();
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            seed,
            layers,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            seed: 0,
            layers,
        })
    }

    pub fn from_state(state: &MlpState) -> Result<Self> {
        let mut net = Mlp::zeros(&state.layer_sizes, state.activation)?;
        net.seed = state.seed;
        net.set_params(&state.params)?;
        Ok(net)
    }

    pub fn to_state(&self) -> MlpState {
        MlpState {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            seed: self.seed,
            params: self.params(),
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// d = Σ (n_in + 1) · n_out.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub fn params(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        ParamVector(out)
    }

    pub fn set_params(&mut self, params: &ParamVector) -> Result<()> {
        self.check_len(params)?;
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            for (dst, src) in layer.weights.iter_mut().zip(&params.0[offset..offset + nw]) {
                *dst = *src;
            }
            offset += nw;
            let nb = layer.bias.len();
            for (dst, src) in layer.bias.iter_mut().zip(&params.0[offset..offset + nb]) {
                *dst = *src;
            }
            offset += nb;
        }
        Ok(())
    }

    /// Sets one layer's weights (`n_in × n_out`) and biases directly.
    pub fn set_layer(&mut self, index: usize, weights: Array2<f64>, bias: Array1<f64>) -> Result<()> {
        let layer = self
            .layers
            .get_mut(index)
            .ok_or_else(|| Error::Config(format!("no layer {index}")))?;
        if weights.dim() != layer.weights.dim() || bias.len() != layer.bias.len() {
            return Err(Error::Config(format!(
                "layer {index} expects weights {:?} and {} biases",
                layer.weights.dim(),
                layer.bias.len()
            )));
        }
        layer.weights = weights;
        layer.bias = bias;
        Ok(())
    }

    fn check_len(&self, v: &ParamVector) -> Result<()> {
        if v.len() != self.param_count() {
            return Err(Error::Config(format!(
                "parameter vector has length {}, network has {} parameters",
                v.len(),
                self.param_count()
            )));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Config(format!(
                "input has {} features, network expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        let c = self.num_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
        }
        Ok(())
    }

    /// Logits for every row of `inputs` (B × C).
    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(&inputs)?;
        let last = self.layers.len() - 1;
        let mut act = inputs.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weights);
            z += &layer.bias;
            if l < last {
                self.activation.apply(&mut z);
            }
            act = z;
        }
        Ok(act)
    }

    pub fn forward_batch(&self, batch: &Batch) -> Result<Array2<f64>> {
        self.forward(batch.inputs.view())
    }

    /// Mean softmax cross-entropy and its gradient, either averaged over
    /// the batch or one vector per example.
    pub fn loss_and_grads(&self, batch: &Batch, mode: GradMode) -> Result<(f64, Grads)> {
        let inputs = batch.inputs.view();
        self.check_inputs(&inputs)?;
        self.check_labels(&batch.labels)?;
        let n = batch.len();
        match mode {
            GradMode::BatchMean => {
                let (loss_sum, mut grad) = self.backprop(inputs, &batch.labels);
                grad.scale(1.0 / n as f64);
                Ok((loss_sum / n as f64, Grads::BatchMean(grad)))
            }
            GradMode::PerExample => {
                let mut loss_sum = 0.0;
                let mut grads = Vec::with_capacity(n);
                for i in 0..n {
                    let row = inputs.slice(s![i..i + 1, ..]);
                    let (loss, grad) = self.backprop(row, &batch.labels[i..i + 1]);
                    loss_sum += loss;
                    grads.push(grad);
                }
                Ok((loss_sum / n as f64, Grads::PerExample(grads)))
            }
        }
    }

    pub fn batch_gradient(&self, batch: &Batch) -> Result<(f64, ParamVector)> {
        match self.loss_and_grads(batch, GradMode::BatchMean)? {
            (loss, Grads::BatchMean(g)) => Ok((loss, g)),
            _ => unreachable!(),
        }
    }

    pub fn per_example_gradients(&self, batch: &Batch) -> Result<(f64, Vec<ParamVector>)> {
        match self.loss_and_grads(batch, GradMode::PerExample)? {
            (loss, Grads::PerExample(g)) => Ok((loss, g)),
            _ => unreachable!(),
        }
    }

    /// Mean loss only.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        self.check_labels(&batch.labels)?;
        let logits = self.forward_batch(batch)?;
        let (losses, _) = per_row_loss(&logits, &batch.labels);
        Ok(losses.iter().sum::<f64>() / batch.len() as f64)
    }

    /// Summed loss and summed gradient over the rows of `inputs`.
    fn backprop(&self, inputs: ArrayView2<f64>, labels: &[usize]) -> (f64, ParamVector) {
        let last = self.layers.len() - 1;
        // acts[l] is the input to layer l; pre[l] the pre-activation of hidden layer l.
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(last);
        acts.push(inputs.to_owned());
        let mut logits = Array2::zeros((0, 0));
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = acts[l].dot(&layer.weights);
            z += &layer.bias;
            if l < last {
                let mut a = z.clone();
                self.activation.apply(&mut a);
                pre.push(z);
                acts.push(a);
            } else {
                logits = z;
            }
        }

        let mut loss_sum = 0.0;
        let mut delta = logits;
        for (mut row, &y) in delta.axis_iter_mut(Axis(0)).zip(labels) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            loss_sum += lse - row[y];
            row.mapv_inplace(|v| (v - lse).exp());
            row[y] -= 1.0;
        }

        let mut grad = vec![0.0; self.param_count()];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(off);
            off += (w[0] + 1) * w[1];
        }
        for l in (0..self.layers.len()).rev() {
            let gw = acts[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let o = offsets[l];
            let nw = gw.len();
            for (dst, src) in grad[o..o + nw].iter_mut().zip(gw.iter()) {
                *dst = *src;
            }
            for (dst, src) in grad[o + nw..o + nw + gb.len()].iter_mut().zip(gb.iter()) {
                *dst = *src;
            }
            if l > 0 {
                let mut upstream = delta.dot(&self.layers[l].weights.t());
                self.activation
                    .backprop(&mut upstream, &pre[l - 1], &acts[l]);
                delta = upstream;
            }
        }
        (loss_sum, ParamVector(grad))
    }

    /// `p ← p − lr · update`.
    pub fn apply_update(&mut self, update: &ParamVector, lr: f64) -> Result<()> {
        self.check_len(update)?;
        if lr == 0.0 {
            return Ok(());
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for p in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *p -= lr * update.0[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

/// Per-row cross-entropy loss and predicted class (argmax, lowest index on ties).
pub fn per_row_loss(logits: &Array2<f64>, labels: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut losses = Vec::with_capacity(labels.len());
    let mut preds = Vec::with_capacity(labels.len());
    for (row, &y) in logits.axis_iter(Axis(0)).zip(labels) {
        let (arg, max) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(ai, am), (i, &v)| {
                if v > am {
                    (i, v)
                } else {
                    (ai, am)
                }
            });
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        losses.push(lse - row[y]);
        preds.push(arg);
    }
    (losses, preds)
}
