//! Label-noise sweeps, anti-adversarial initialization, easy/hard splits,
//! difficulty scoring and cross-generalization.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    evaluate, first_epoch_reaching, gap_summary, train_run, train_run_with, EvalSet, GapSummary,
    MetricsRecord, NetConfig, RunOptions, RunResult,
};
use crate::data::{corrupt_labels, fix_eval_subsets, NoisyDataset};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::optim::OptimizerConfig;

/// Mixes a base seed with a tag so derived runs get unrelated streams.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut x = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    x = (x ^ (x >> 33)).wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    x ^ (x >> 33)
}

fn run_quiet(
    ds: &NoisyDataset,
    net: &NetConfig,
    opt: &OptimizerConfig,
    epochs: usize,
    seed: u64,
    options: RunOptions,
) -> Result<RunResult> {
    train_run_with(ds, net, opt, epochs, seed, options, None::<&mut Vec<u8>>)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseRun {
    pub noise: f64,
    pub metrics: Vec<MetricsRecord>,
    pub gap: Option<GapSummary>,
}

/// Orderings predicted for increasing label noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoisePredictions {
    pub noise: Vec<f64>,
    /// Epochs until train accuracy first reaches `train_threshold` (None: never).
    pub epochs_to_train_threshold: Vec<Option<usize>>,
    /// Epochs until pristine accuracy reaches `pristine_threshold`; None for
    /// noise levels without pristine examples or when never reached.
    pub epochs_to_pristine_threshold: Vec<Option<usize>>,
    /// Per noise level in (0, 1): whether pristine ≥ corrupt accuracy held on
    /// every epoch before the corrupt examples were memorized.
    pub pristine_leads_corrupt: Vec<Option<bool>>,
    pub train_threshold: f64,
    pub pristine_threshold: f64,
    pub memorized_threshold: f64,
    pub learning_slows_with_noise: bool,
    pub pristine_first: bool,
    pub pristine_slows_with_noise: bool,
}

/// `None` is read as "later than any finite epoch".
pub fn nondecreasing_epochs(epochs: &[Option<usize>]) -> bool {
    epochs.windows(2).all(|w| match (w[0], w[1]) {
        (Some(a), Some(b)) => a <= b,
        (None, Some(_)) => false,
        (_, None) => true,
    })
}

/// Whether pristine accuracy is at least the corrupt accuracy on every
/// epoch before corrupt accuracy first reaches `memorized`.
pub fn pristine_leads(metrics: &[MetricsRecord], memorized: f64) -> Option<bool> {
    let mut any = false;
    for r in metrics {
        let (p, c) = (r.pristine_acc?, r.corrupt_acc?);
        if c >= memorized {
            break;
        }
        any = true;
        if p < c {
            return Some(false);
        }
    }
    any.then_some(true)
}

impl NoisePredictions {
    pub fn from_runs(runs: &[NoiseRun], train_threshold: f64, pristine_threshold: f64, memorized: f64) -> Self {
        let noise: Vec<f64> = runs.iter().map(|r| r.noise).collect();
        let epochs_to_train_threshold: Vec<_> = runs
            .iter()
            .map(|r| first_epoch_reaching(&r.metrics, train_threshold, |m| Some(m.train_acc)))
            .collect();
        let with_pristine: Vec<&NoiseRun> = runs.iter().filter(|r| r.noise < 1.0).collect();
        let epochs_to_pristine_threshold: Vec<_> = runs
            .iter()
            .map(|r| {
                (r.noise < 1.0)
                    .then(|| first_epoch_reaching(&r.metrics, pristine_threshold, |m| m.pristine_acc))
                    .flatten()
            })
            .collect();
        let pristine_leads_corrupt: Vec<_> = runs
            .iter()
            .map(|r| {
                (r.noise > 0.0 && r.noise < 1.0)
                    .then(|| pristine_leads(&r.metrics, memorized))
                    .flatten()
            })
            .collect();
        let pristine_series: Vec<Option<usize>> = with_pristine
            .iter()
            .map(|r| first_epoch_reaching(&r.metrics, pristine_threshold, |m| m.pristine_acc))
            .collect();
        NoisePredictions {
            learning_slows_with_noise: nondecreasing_epochs(&epochs_to_train_threshold),
            pristine_first: runs
                .iter()
                .zip(&pristine_leads_corrupt)
                .filter(|(r, _)| r.noise > 0.0 && r.noise < 1.0)
                .all(|(_, ok)| *ok == Some(true)),
            pristine_slows_with_noise: nondecreasing_epochs(&pristine_series),
            noise,
            epochs_to_train_threshold,
            epochs_to_pristine_threshold,
            pristine_leads_corrupt,
            train_threshold,
            pristine_threshold,
            memorized_threshold: memorized,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseSweep {
    pub runs: Vec<NoiseRun>,
    pub predictions: NoisePredictions,
}

/// Settings shared by the label-noise experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseProtocol {
    pub eval_cap: usize,
    pub train_threshold: f64,
    pub pristine_threshold: f64,
    pub memorized_threshold: f64,
}

impl Default for NoiseProtocol {
    fn default() -> Self {
        NoiseProtocol {
            eval_cap: 1000,
            train_threshold: 0.9,
            pristine_threshold: 0.8,
            memorized_threshold: 0.9,
        }
    }
}

/// Corrupts `ds` at noise level `p` and fixes its evaluation subsets, with
/// seeds derived from `seed` and `p`.
pub fn noisy_copy(ds: &NoisyDataset, p: f64, eval_cap: usize, seed: u64) -> Result<NoisyDataset> {
    let tag = (p * 1e6).round() as u64;
    let noisy = corrupt_labels(ds, p, derive_seed(seed, 2 * tag + 1))?;
    fix_eval_subsets(&noisy, eval_cap, derive_seed(seed, 2 * tag + 2))
}

/// One training run per noise level on freshly corrupted copies of `ds`.
/// Runs execute in parallel on the current rayon pool.
pub fn noise_sweep(
    ds: &NoisyDataset,
    p_list: &[f64],
    net: &NetConfig,
    opt: &OptimizerConfig,
    epochs: usize,
    seed: u64,
    protocol: &NoiseProtocol,
) -> Result<NoiseSweep> {
    if p_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config(format!("noise levels must be ascending, got {p_list:?}")));
    }
    let runs = p_list
        .par_iter()
        .map(|&p| {
            let noisy = noisy_copy(ds, p, protocol.eval_cap, seed)?;
            let run = train_run(&noisy, net, opt, epochs, seed)?;
            Ok(NoiseRun {
                noise: p,
                gap: gap_summary(&run.metrics),
                metrics: run.metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let predictions = NoisePredictions::from_runs(
        &runs,
        protocol.train_threshold,
        protocol.pristine_threshold,
        protocol.memorized_threshold,
    );
    Ok(NoiseSweep { runs, predictions })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AntiAdversarialReport {
    pub threshold: f64,
    /// Epochs to threshold from the clean-pretrained weights (None: budget exceeded).
    pub epochs_warm: Option<usize>,
    /// Epochs to threshold from random initialization (None: budget exceeded).
    pub epochs_cold: Option<usize>,
    pub warm_first_epoch_acc: Option<f64>,
    pub cold_first_epoch_acc: Option<f64>,
    pub pretrain_epochs: usize,
    pub pretrain_train_acc: f64,
    pub warm_metrics: Vec<MetricsRecord>,
    pub cold_metrics: Vec<MetricsRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntiAdversarialConfig {
    pub threshold: f64,
    pub pretrain_target: f64,
    pub pretrain_budget: usize,
    pub budget: usize,
}

impl Default for AntiAdversarialConfig {
    fn default() -> Self {
        AntiAdversarialConfig {
            threshold: 0.9,
            pretrain_target: 1.0,
            pretrain_budget: 200,
            budget: 200,
        }
    }
}

/// Trains on fully corrupted labels from a random initialization (cold)
/// and from weights pre-trained on the clean labels (warm), and reports how
/// many epochs each takes to reach `cfg.threshold` train accuracy.
pub fn anti_adversarial(
    ds_clean: &NoisyDataset,
    ds_fullnoise: &NoisyDataset,
    net: &NetConfig,
    opt: &OptimizerConfig,
    cfg: &AntiAdversarialConfig,
    seed: u64,
) -> Result<AntiAdversarialReport> {
    if ds_clean.train.len() != ds_fullnoise.train.len()
        || ds_clean
            .train
            .iter()
            .zip(&ds_fullnoise.train)
            .any(|(a, b)| a.id != b.id || a.features != b.features)
    {
        return Err(Error::Config(
            "anti-adversarial runs need the noisy dataset to relabel the clean one".into(),
        ));
    }
    let pre = run_quiet(
        ds_clean,
        net,
        opt,
        cfg.pretrain_budget,
        derive_seed(seed, 11),
        RunOptions {
            stop_at_train_acc: Some(cfg.pretrain_target),
            ..Default::default()
        },
    )?;
    let stop = || RunOptions {
        stop_at_train_acc: Some(cfg.threshold),
        ..Default::default()
    };
    // Cold and warm share their shuffling seed; only the starting weights differ.
    let run_seed = derive_seed(seed, 12);
    let cold = run_quiet(ds_fullnoise, net, opt, cfg.budget, run_seed, stop())?;
    let warm = run_quiet(
        ds_fullnoise,
        net,
        opt,
        cfg.budget,
        run_seed,
        RunOptions {
            init: Some(pre.model.clone()),
            ..stop()
        },
    )?;
    let reach = |m: &[MetricsRecord]| first_epoch_reaching(m, cfg.threshold, |r| Some(r.train_acc));
    Ok(AntiAdversarialReport {
        threshold: cfg.threshold,
        epochs_warm: reach(&warm.metrics),
        epochs_cold: reach(&cold.metrics),
        warm_first_epoch_acc: warm.metrics.first().map(|r| r.train_acc),
        cold_first_epoch_acc: cold.metrics.first().map(|r| r.train_acc),
        pretrain_epochs: pre.metrics.len(),
        pretrain_train_acc: pre.metrics.last().map(|r| r.train_acc).unwrap_or(0.0),
        warm_metrics: warm.metrics,
        cold_metrics: cold.metrics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EasyHardSplit {
    /// Train ids predicted correctly when the threshold was first reached.
    pub easy: Vec<u64>,
    pub hard: Vec<u64>,
    pub epoch: usize,
    pub train_acc: f64,
    pub threshold: f64,
}

/// Trains until train accuracy first reaches `threshold` at an epoch
/// boundary and splits the training set by whether that model predicts
/// each example's observed label.
pub fn easy_hard_split(
    ds: &NoisyDataset,
    net: &NetConfig,
    opt: &OptimizerConfig,
    threshold: f64,
    max_epochs: usize,
    seed: u64,
) -> Result<EasyHardSplit> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "easy/hard threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let run = run_quiet(
        ds,
        net,
        opt,
        max_epochs,
        seed,
        RunOptions {
            stop_at_train_acc: Some(threshold),
            ..Default::default()
        },
    )?;
    let last = run.metrics.last();
    let last_accuracy = last.map(|r| r.train_acc).unwrap_or(0.0);
    if last_accuracy < threshold {
        return Err(Error::ThresholdUnreached {
            threshold,
            epochs: max_epochs,
            last_accuracy,
        });
    }
    split_by_model(ds, &run.model, last.unwrap().epoch, threshold)
}

fn split_by_model(ds: &NoisyDataset, model: &Mlp, epoch: usize, threshold: f64) -> Result<EasyHardSplit> {
    let set = EvalSet::new(&ds.train, ds.input_dim);
    let rows = set.per_example(model)?;
    let (mut easy, mut hard) = (Vec::new(), Vec::new());
    for (&id, &(_, correct)) in set.ids().iter().zip(&rows) {
        if correct {
            easy.push(id);
        } else {
            hard.push(id);
        }
    }
    let train_acc = easy.len() as f64 / rows.len().max(1) as f64;
    Ok(EasyHardSplit {
        easy,
        hard,
        epoch,
        train_acc,
        threshold,
    })
}

pub fn jaccard(a: &[u64], b: &[u64]) -> f64 {
    let sa: HashSet<u64> = a.iter().copied().collect();
    let sb: HashSet<u64> = b.iter().copied().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Per train id, the number of runs (out of `runs`) that split it as hard.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyTable {
    pub runs: usize,
    pub hard_count: BTreeMap<u64, usize>,
}

impl DifficultyTable {
    pub fn from_splits(train_ids: &[u64], splits: &[EasyHardSplit]) -> Self {
        let mut hard_count: BTreeMap<u64, usize> = train_ids.iter().map(|&id| (id, 0)).collect();
        for split in splits {
            for id in &split.hard {
                *hard_count.entry(*id).or_insert(0) += 1;
            }
        }
        DifficultyTable {
            runs: splits.len(),
            hard_count,
        }
    }

    /// Number of examples at each difficulty 0..=runs.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.runs + 1];
        for &c in self.hard_count.values() {
            h[c] += 1;
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("example_id,hard_count\n");
        for (id, c) in &self.hard_count {
            out.push_str(&format!("{id},{c}\n"));
        }
        out
    }

    pub fn from_csv(text: &str, runs: usize) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("example_id,hard_count") {
            return Err(Error::Data("difficulty csv: bad header".into()));
        }
        let mut hard_count = BTreeMap::new();
        for (i, l) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || Error::Data(format!("difficulty csv line {}: {l:?}", i + 2));
            let (id, c) = l.split_once(',').ok_or_else(bad)?;
            let c: usize = c.parse().map_err(|_| bad())?;
            if c > runs {
                return Err(bad());
            }
            hard_count.insert(id.parse().map_err(|_| bad())?, c);
        }
        Ok(DifficultyTable { runs, hard_count })
    }
}

/// Runs [`easy_hard_split`] once per seed and counts hard classifications.
pub fn difficulty_score(
    ds: &NoisyDataset,
    net: &NetConfig,
    opt: &OptimizerConfig,
    threshold: f64,
    max_epochs: usize,
    seeds: &[u64],
) -> Result<DifficultyTable> {
    let distinct: HashSet<u64> = seeds.iter().copied().collect();
    if distinct.len() != seeds.len() || seeds.is_empty() {
        return Err(Error::Config(format!("difficulty needs distinct seeds, got {seeds:?}")));
    }
    let splits = seeds
        .par_iter()
        .map(|&s| easy_hard_split(ds, net, opt, threshold, max_epochs, s))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<u64> = ds.train.iter().map(|e| e.id).collect();
    Ok(DifficultyTable::from_splits(&ids, &splits))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub difficulty: usize,
    pub count: usize,
    pub accuracy: Option<f64>,
}

/// Training accuracy of `model` on each difficulty bucket.
pub fn accuracy_by_difficulty(
    table: &DifficultyTable,
    ds: &NoisyDataset,
    model: &Mlp,
) -> Result<Vec<BucketAccuracy>> {
    let set = EvalSet::new(&ds.train, ds.input_dim);
    let rows = set.per_example(model)?;
    let mut correct = vec![0usize; table.runs + 1];
    let mut count = vec![0usize; table.runs + 1];
    for (id, &(_, ok)) in set.ids().iter().zip(&rows) {
        let d = *table
            .hard_count
            .get(id)
            .ok_or_else(|| Error::Data(format!("train id {id} missing from difficulty table")))?;
        count[d] += 1;
        correct[d] += ok as usize;
    }
    Ok((0..=table.runs)
        .map(|d| BucketAccuracy {
            difficulty: d,
            count: count[d],
            accuracy: (count[d] > 0).then(|| correct[d] as f64 / count[d] as f64),
        })
        .collect())
}

/// Sizes of e-train / e-test / h-train / h-test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum XGenSizes {
    /// Fractions of each pool (easy or hard).
    Fractions { train: f64, test: f64 },
    Absolute {
        easy_train: usize,
        easy_test: usize,
        hard_train: usize,
        hard_test: usize,
    },
}

impl Default for XGenSizes {
    fn default() -> Self {
        XGenSizes::Fractions {
            train: 0.4,
            test: 0.08,
        }
    }
}

impl XGenSizes {
    fn resolve(&self, easy_pool: usize, hard_pool: usize) -> Result<[usize; 4]> {
        let sizes = match *self {
            XGenSizes::Fractions { train, test } => {
                let f = |pool: usize, frac: f64| (pool as f64 * frac).floor() as usize;
                [f(easy_pool, train), f(easy_pool, test), f(hard_pool, train), f(hard_pool, test)]
            }
            XGenSizes::Absolute {
                easy_train,
                easy_test,
                hard_train,
                hard_test,
            } => [easy_train, easy_test, hard_train, hard_test],
        };
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("every cross-generalization subset must be non-empty, got {sizes:?}")));
        }
        if sizes[0] + sizes[1] > easy_pool || sizes[2] + sizes[3] > hard_pool {
            return Err(Error::Config(format!(
                "subsets {sizes:?} do not fit pools of {easy_pool} easy and {hard_pool} hard examples"
            )));
        }
        Ok(sizes)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossGenReport {
    pub easy_on_easy: f64,
    pub easy_on_hard: f64,
    pub hard_on_easy: f64,
    pub hard_on_hard: f64,
    pub sizes: [usize; 4],
    pub easy_metrics: Vec<MetricsRecord>,
    pub hard_metrics: Vec<MetricsRecord>,
    pub split_epoch: usize,
    pub split_train_acc: f64,
}

impl CrossGenReport {
    pub fn to_csv(&self) -> String {
        format!(
            "trained_on,evaluated_on,accuracy\neasy,easy,{}\neasy,hard,{}\nhard,easy,{}\nhard,hard,{}\n",
            self.easy_on_easy, self.easy_on_hard, self.hard_on_easy, self.hard_on_hard
        )
    }
}

fn draw(pool: &[u64], n_train: usize, n_test: usize, rng: &mut ChaCha8Rng) -> (Vec<u64>, Vec<u64>) {
    let picked = sample(rng, pool.len(), n_train + n_test).into_vec();
    let ids: Vec<u64> = picked.into_iter().map(|i| pool[i]).collect();
    (ids[..n_train].to_vec(), ids[n_train..].to_vec())
}

/// Trains one model on e-train and one on h-train and evaluates both on
/// e-test and h-test. Subsets are disjoint seeded samples of each pool.
pub fn cross_generalization_from_split(
    ds: &NoisyDataset,
    split: &EasyHardSplit,
    net: &NetConfig,
    opt: &OptimizerConfig,
    sizes: &XGenSizes,
    epochs: usize,
    seed: u64,
) -> Result<CrossGenReport> {
    let s = sizes.resolve(split.easy.len(), split.hard.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 31));
    let (e_train, e_test) = draw(&split.easy, s[0], s[1], &mut rng);
    let (h_train, h_test) = draw(&split.hard, s[2], s[3], &mut rng);
    let easy_ds = ds.subset(&e_train, &e_test);
    let hard_ds = ds.subset(&h_train, &h_test);
    let (easy_run, hard_run) = rayon::join(
        || train_run(&easy_ds, net, opt, epochs, derive_seed(seed, 32)),
        || train_run(&hard_ds, net, opt, epochs, derive_seed(seed, 33)),
    );
    let (easy_run, hard_run) = (easy_run?, hard_run?);
    Ok(CrossGenReport {
        easy_on_easy: evaluate(&easy_run.model, &easy_ds.test)?.accuracy,
        easy_on_hard: evaluate(&easy_run.model, &hard_ds.test)?.accuracy,
        hard_on_easy: evaluate(&hard_run.model, &easy_ds.test)?.accuracy,
        hard_on_hard: evaluate(&hard_run.model, &hard_ds.test)?.accuracy,
        sizes: s,
        easy_metrics: easy_run.metrics,
        hard_metrics: hard_run.metrics,
        split_epoch: split.epoch,
        split_train_acc: split.train_acc,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn cross_generalization(
    ds: &NoisyDataset,
    net: &NetConfig,
    opt: &OptimizerConfig,
    threshold: f64,
    split_max_epochs: usize,
    sizes: &XGenSizes,
    epochs: usize,
    seed: u64,
) -> Result<CrossGenReport> {
    let split = easy_hard_split(ds, net, opt, threshold, split_max_epochs, seed)?;
    cross_generalization_from_split(ds, &split, net, opt, sizes, epochs, seed)
}
