//! Training runs and the experiment protocols built on them.

pub mod desk;
mod experiments;
mod metrics;

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{feature_matrix, make_batch, LabeledExample, NoisyDataset};
use crate::error::{Error, Result};
use crate::nn::{per_row_loss, Activation, Mlp};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerState};

pub use experiments::*;
pub use metrics::*;

/// Hidden layers of the classifier; input and output sizes come from the
/// dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden_sizes: vec![256, 256],
            activation: Activation::Relu,
        }
    }
}

impl NetConfig {
    pub fn layer_sizes(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(input_dim);
        sizes.extend(&self.hidden_sizes);
        sizes.push(classes);
        sizes
    }

    pub fn build(&self, ds: &NoisyDataset, seed: u64) -> Result<Mlp> {
        Mlp::new(
            &self.layer_sizes(ds.input_dim, ds.num_classes),
            self.activation,
            seed,
        )
    }
}

/// Where a run starts from and when it stops early.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Start from these weights instead of a fresh seeded initialization.
    pub init: Option<Mlp>,
    /// Resume a checkpointed run: model, optimizer state and epochs done.
    pub resume: Option<(Mlp, OptimizerState, usize)>,
    /// Stop at the first epoch boundary where train accuracy reaches this.
    pub stop_at_train_acc: Option<f64>,
    pub record_wall_time: bool,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: Mlp,
    pub optimizer: Optimizer,
    pub metrics: Vec<MetricsRecord>,
}

impl RunResult {
    pub fn gap(&self) -> Option<GapSummary> {
        gap_summary(&self.metrics)
    }
}

/// Mean accuracy and loss of a set of examples, against observed labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub count: usize,
}

/// Per-example predictions for a fixed set of examples, evaluated in chunks.
pub struct EvalSet {
    inputs: Array2<f64>,
    labels: Vec<usize>,
    ids: Vec<u64>,
}

const EVAL_CHUNK: usize = 1024;

impl EvalSet {
    pub fn new(examples: &[LabeledExample], dim: usize) -> Self {
        EvalSet {
            inputs: feature_matrix(examples, dim),
            labels: examples.iter().map(|e| e.observed_label).collect(),
            ids: examples.iter().map(|e| e.id).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Per-example (loss, correct) in input order.
    pub fn per_example(&self, net: &Mlp) -> Result<Vec<(f64, bool)>> {
        let mut out = Vec::with_capacity(self.len());
        let mut start = 0;
        while start < self.len() {
            let end = (start + EVAL_CHUNK).min(self.len());
            let logits = net.forward(self.inputs.slice(s![start..end, ..]))?;
            let labels = &self.labels[start..end];
            let (losses, preds) = per_row_loss(&logits, labels);
            out.extend(
                losses
                    .into_iter()
                    .zip(preds.iter().zip(labels))
                    .map(|(l, (p, y))| (l, p == y)),
            );
            start = end;
        }
        Ok(out)
    }

    pub fn evaluate(&self, net: &Mlp) -> Result<Evaluation> {
        Ok(summarize(self.per_example(net)?.iter()))
    }
}

fn summarize<'a>(rows: impl Iterator<Item = &'a (f64, bool)>) -> Evaluation {
    let (mut loss, mut correct, mut n) = (0.0, 0usize, 0usize);
    for &(l, c) in rows {
        loss += l;
        correct += c as usize;
        n += 1;
    }
    if n == 0 {
        return Evaluation {
            accuracy: 0.0,
            loss: 0.0,
            count: 0,
        };
    }
    Evaluation {
        accuracy: correct as f64 / n as f64,
        loss: loss / n as f64,
        count: n,
    }
}

pub fn evaluate(net: &Mlp, examples: &[LabeledExample]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Ok(summarize(std::iter::empty()));
    }
    EvalSet::new(examples, net.input_dim()).evaluate(net)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Seeded permutation of `0..n` used to order epoch `epoch`.
pub fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut epoch_rng(seed, epoch));
    order
}

struct Evaluator {
    train: EvalSet,
    test: EvalSet,
    pristine_rows: Vec<usize>,
    corrupt_rows: Vec<usize>,
}

impl Evaluator {
    fn new(ds: &NoisyDataset) -> Self {
        let position: HashMap<u64, usize> =
            ds.train.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
        let rows = |ids: &[u64]| ids.iter().filter_map(|id| position.get(id).copied()).collect();
        Evaluator {
            train: EvalSet::new(&ds.train, ds.input_dim),
            test: EvalSet::new(&ds.test, ds.input_dim),
            pristine_rows: rows(&ds.eval_pristine),
            corrupt_rows: rows(&ds.eval_corrupt),
        }
    }

    fn record(&self, net: &Mlp, epoch: usize, lr: f64, wall_ms: u64) -> Result<MetricsRecord> {
        let train = self.train.per_example(net)?;
        let test = self.test.per_example(net)?;
        let subset = |rows: &[usize]| {
            (!rows.is_empty()).then(|| summarize(rows.iter().map(|&i| &train[i])))
        };
        let tr = summarize(train.iter());
        let te = summarize(test.iter());
        let pristine = subset(&self.pristine_rows);
        let corrupt = subset(&self.corrupt_rows);
        Ok(MetricsRecord {
            epoch,
            train_acc: tr.accuracy,
            test_acc: te.accuracy,
            train_loss: tr.loss,
            test_loss: te.loss,
            pristine_acc: pristine.map(|e| e.accuracy),
            pristine_loss: pristine.map(|e| e.loss),
            corrupt_acc: corrupt.map(|e| e.accuracy),
            corrupt_loss: corrupt.map(|e| e.loss),
            lr,
            wall_ms,
        })
    }
}

/// Trains a fresh seeded network for `epochs` epochs.
pub fn train_run(
    ds: &NoisyDataset,
    net_cfg: &NetConfig,
    opt_cfg: &OptimizerConfig,
    epochs: usize,
    seed: u64,
) -> Result<RunResult> {
    train_run_with(ds, net_cfg, opt_cfg, epochs, seed, RunOptions::default(), None::<&mut Vec<u8>>)
}

/// Full training loop.
///
/// Each epoch shuffles the training set with a permutation derived from
/// `(seed, epoch)`, feeds consecutive full batches to the optimizer
/// (an incomplete trailing batch is dropped), then evaluates every metric.
/// Rows are appended to `sink` as CSV when given. A non-finite loss
/// aborts the run with [`Error::Divergence`].
pub fn train_run_with<W: Write>(
    ds: &NoisyDataset,
    net_cfg: &NetConfig,
    opt_cfg: &OptimizerConfig,
    epochs: usize,
    seed: u64,
    options: RunOptions,
    sink: Option<&mut W>,
) -> Result<RunResult> {
    opt_cfg.validate()?;
    let mut sink = sink.map(MetricsCsv::new).transpose()?;
    let (mut net, mut opt, start_epoch) = match options.resume {
        Some((net, state, done)) => (net, Optimizer::from_state(opt_cfg.clone(), state)?, done),
        None => {
            let net = match options.init {
                Some(net) => net,
                None => net_cfg.build(ds, seed)?,
            };
            (net, Optimizer::new(opt_cfg.clone())?, 0)
        }
    };
    if net.input_dim() != ds.input_dim || net.num_classes() != ds.num_classes {
        return Err(Error::Config(format!(
            "network {:?} does not fit dataset ({} features, {} classes)",
            net.layer_sizes(),
            ds.input_dim,
            ds.num_classes
        )));
    }
    let evaluator = Evaluator::new(&ds);
    let step_size = opt.step_batch_size();
    if step_size == 0 || step_size > ds.train.len() {
        return Err(Error::Config(format!(
            "batch of {step_size} does not fit {} training examples",
            ds.train.len()
        )));
    }
    let mut metrics = Vec::with_capacity(epochs.saturating_sub(start_epoch));
    let mut step = 0;
    for epoch in start_epoch..epochs {
        let started = Instant::now();
        opt.set_epoch(epoch);
        let lr = opt.lr();
        let order = epoch_permutation(seed, epoch, ds.train.len());
        for chunk in order.chunks_exact(step_size) {
            let members: Vec<&LabeledExample> = chunk.iter().map(|&i| &ds.train[i]).collect();
            let batch = make_batch(&members, ds.input_dim)?;
            let report = opt.step(&mut net, &batch)?;
            step += 1;
            if !report.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    step,
                    loss: report.loss,
                });
            }
        }
        let wall_ms = if options.record_wall_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        let record = evaluator.record(&net, epoch + 1, lr, wall_ms)?;
        if !record.train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                step,
                loss: record.train_loss,
            });
        }
        if let Some(s) = sink.as_mut() {
            s.append(&record)?;
        }
        let done = options
            .stop_at_train_acc
            .is_some_and(|t| record.train_acc >= t);
        metrics.push(record);
        if done {
            break;
        }
    }
    Ok(RunResult {
        model: net,
        optimizer: opt,
        metrics,
    })
}
