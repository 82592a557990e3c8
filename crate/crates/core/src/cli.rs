//! The `cgrad` command line: JSON run configs in, run directories out.
//!
//! Each command writes into `<out>/<command>-<digest>`, where the digest is
//! taken over the command name and the normalized config. Re-running a
//! command with that directory's `manifest.json` as `--config` repeats it.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::data::{gen_synthetic, load_mnist, DatasetManifest, DatasetSource, NoisyDataset};
use crate::error::{Error, Result};
use crate::harness::{
    accuracy_by_difficulty, cross_generalization, derive_seed, difficulty_score, easy_hard_split,
    gap_summary, noisy_copy, train_run_with, GapSummary, MetricsRecord, NetConfig,
    NoisePredictions, NoiseProtocol, NoiseRun, RunOptions, XGenSizes,
};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::verify::{self, CheckResult};

pub const EXIT_CHECKS_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_DIVERGENCE: i32 = 5;
pub const EXIT_THRESHOLD: i32 = 6;

pub const MANIFEST_VERSION: u32 = 1;

pub fn tool_version() -> String {
    match option_env!("CGRAD_GIT_DESCRIBE") {
        Some(d) => format!("cgrad {d}"),
        None => format!("cgrad v{}", env!("CARGO_PKG_VERSION")),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Usage(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        Error::Idx(_) | Error::Data(_) => EXIT_DATA,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::ThresholdUnreached { .. } => EXIT_THRESHOLD,
    }
}

pub fn error_json(err: &Error) -> String {
    json!({
        "error": err.kind(),
        "message": err.to_string(),
        "exit_code": exit_code(err),
    })
    .to_string()
}

fn default_eval_cap() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    #[serde(default)]
    pub noise: f64,
    pub noise_seed: u64,
    #[serde(default = "default_eval_cap")]
    pub eval_cap: usize,
}

fn default_output_dir() -> String {
    "runs".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Fill the `wall_ms` column. Off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub noise_levels: Vec<f64>,
    pub optimizers: Vec<OptimizerKind>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            noise_levels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            optimizers: vec![OptimizerKind::Sgd],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub threshold: f64,
    pub max_epochs: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            threshold: 0.5,
            max_epochs: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DifficultyConfig {
    /// Number of independent split runs R.
    pub runs: usize,
    /// The follow-up RM3 run; `run.epochs` when absent.
    pub rm3_epochs: Option<usize>,
    /// Settings of the RM3 run; the main optimizer with kind `rm3` when
    /// absent.
    pub rm3_optimizer: Option<OptimizerConfig>,
}

impl Default for DifficultyConfig {
    fn default() -> Self {
        DifficultyConfig {
            runs: 8,
            rm3_epochs: None,
            rm3_optimizer: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XGenConfig {
    pub sizes: XGenSizes,
    /// Epochs for the easy and hard models; `run.epochs` when absent.
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentsConfig {
    pub sweep: SweepConfig,
    pub split: SplitConfig,
    pub difficulty: DifficultyConfig,
    pub xgen: XGenConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: DatasetConfig,
    pub model: NetConfig,
    pub optimizer: OptimizerConfig,
    pub run: RunSection,
    #[serde(default)]
    pub experiments: ExperimentsConfig,
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl RunConfigFile {
    /// Parses a config, or the `config` section of a run manifest.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        if value.get("manifest_version").is_some() {
            value = value
                .get_mut("config")
                .map(Value::take)
                .ok_or_else(|| Error::Config("manifest has no config section".into()))?;
        }
        let cfg: RunConfigFile = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative IDX paths resolve against its directory and
    /// are stored absolute, so manifests stay valid wherever they live.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } = &mut cfg.dataset.source
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                let joined = std::path::absolute(base.join(&*p))?;
                *p = joined.to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        check_fraction("dataset.noise", self.dataset.noise)?;
        if self.dataset.eval_cap == 0 {
            return Err(Error::Config("dataset.eval_cap must be positive".into()));
        }
        if self.model.hidden_sizes.contains(&0) {
            return Err(Error::Config("model.hidden_sizes must be positive".into()));
        }
        let x = &self.experiments;
        for &p in &x.sweep.noise_levels {
            check_fraction("experiments.sweep.noise_levels", p)?;
        }
        if x.sweep.noise_levels.is_empty() || x.sweep.optimizers.is_empty() {
            return Err(Error::Config("sweep needs at least one noise level and optimizer".into()));
        }
        check_fraction("experiments.split.threshold", x.split.threshold)?;
        if x.difficulty.runs == 0 {
            return Err(Error::Config("experiments.difficulty.runs must be positive".into()));
        }
        if let Some(o) = &x.difficulty.rm3_optimizer {
            o.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 over the command name and the compact normalized config.
    pub fn digest(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(serde_json::to_string(self).expect("config serializes").as_bytes());
        hex::encode(h.finalize())
    }
}

/// The clean dataset named by the config, before any label noise.
pub fn load_base_dataset(cfg: &DatasetConfig) -> Result<NoisyDataset> {
    match &cfg.source {
        DatasetSource::Synthetic(params) => gen_synthetic(params),
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => load_mnist(
            Path::new(train_images),
            Path::new(train_labels),
            Path::new(test_images),
            Path::new(test_labels),
        ),
    }
}

/// The dataset at the configured noise level, with fixed evaluation subsets.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<(NoisyDataset, DatasetManifest)> {
    let base = load_base_dataset(cfg)?;
    let ds = noisy_copy(&base, cfg.noise, cfg.eval_cap, cfg.noise_seed)?;
    let manifest = ds.manifest(cfg.source.clone());
    Ok((ds, manifest))
}

/// Creates `<out>/<command>-<digest prefix>`, refusing to reuse a directory
/// that already holds a manifest.
pub fn run_dir(out: &Path, command: &str, cfg: &RunConfigFile) -> Result<PathBuf> {
    let dir = out.join(format!("{command}-{}", &cfg.digest(command)[..12]));
    if dir.join("manifest.json").exists() {
        return Err(Error::Usage(format!(
            "{} already holds a run; remove it or pass another --out",
            dir.display()
        )));
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfigFile,
    dataset: &DatasetManifest,
    outputs: &[&str],
) -> Result<()> {
    let manifest = json!({
        "manifest_version": MANIFEST_VERSION,
        "tool_version": tool_version(),
        "command": command,
        "config_digest": cfg.digest(command),
        "config": cfg,
        "dataset": dataset,
        "outputs": outputs,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_ids(path: &Path, ids: &[u64]) -> Result<()> {
    let mut text = String::with_capacity(8 * ids.len());
    for id in ids {
        let _ = writeln!(text, "{id}");
    }
    fs::write(path, text)?;
    Ok(())
}

fn train_to_dir(
    ds: &NoisyDataset,
    cfg: &RunConfigFile,
    opt: &OptimizerConfig,
    dir: &Path,
    options: RunOptions,
) -> Result<(Vec<MetricsRecord>, Checkpoint)> {
    let mut sink = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    let run = train_run_with(ds, &cfg.model, opt, cfg.run.epochs, cfg.run.seed, options, Some(&mut sink))?;
    let done = run.metrics.last().map_or(0, |r| r.epoch);
    let ckpt = Checkpoint::new(&run.model, &run.optimizer, done, cfg.run.seed);
    ckpt.save(&dir.join("checkpoint.json"))?;
    Ok((run.metrics, ckpt))
}

/// Builds the dataset and writes it with its manifest.
pub fn cmd_gen(cfg: &RunConfigFile, out: &Path) -> Result<PathBuf> {
    let (ds, manifest) = build_dataset(&cfg.dataset)?;
    let dir = run_dir(out, "gen", cfg)?;
    write_json(&dir.join("dataset.json"), &ds)?;
    write_json(&dir.join("dataset_manifest.json"), &manifest)?;
    write_manifest(&dir, "gen", cfg, &manifest, &["dataset.json", "dataset_manifest.json"])?;
    Ok(dir)
}

/// One training run. With `resume`, continues from a checkpoint written by
/// an earlier run of the same config and records only the remaining epochs.
pub fn cmd_train(cfg: &RunConfigFile, out: &Path, resume: Option<&Path>) -> Result<PathBuf> {
    let (ds, manifest) = build_dataset(&cfg.dataset)?;
    let mut options = RunOptions {
        record_wall_time: cfg.run.record_wall_time,
        ..RunOptions::default()
    };
    if let Some(path) = resume {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.optimizer.as_ref() != Some(&cfg.optimizer) || ckpt.run_seed != cfg.run.seed {
            return Err(Error::Config(format!(
                "{} was written by a run with a different optimizer or seed",
                path.display()
            )));
        }
        let state = ckpt
            .optimizer_state
            .clone()
            .ok_or_else(|| Error::Config("checkpoint carries no optimizer state".into()))?;
        options.resume = Some((ckpt.model()?, state, ckpt.epochs_done));
    }
    let dir = run_dir(out, "train", cfg)?;
    let (metrics, _) = train_to_dir(&ds, cfg, &cfg.optimizer, &dir, options)?;
    write_json(&dir.join("summary.json"), &gap_summary(&metrics))?;
    write_manifest(&dir, "train", cfg, &manifest, &["metrics.csv", "checkpoint.json", "summary.json"])?;
    Ok(dir)
}

/// One row of the sweep summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub noise: f64,
    pub optimizer: OptimizerKind,
    pub gap: Option<GapSummary>,
    pub final_pristine_acc: Option<f64>,
    pub final_corrupt_acc: Option<f64>,
}

pub const SWEEP_SUMMARY_HEADER: &str = "noise,optimizer,final_epoch,final_train_acc,final_test_acc,final_gap,best_test_epoch,best_test_acc,gap_at_best_test,final_pristine_acc,final_corrupt_acc";

pub fn cell_name(noise: f64, kind: OptimizerKind) -> String {
    format!("p{noise:.2}-{kind}")
}

impl SweepCell {
    pub fn from_metrics(noise: f64, optimizer: OptimizerKind, metrics: &[MetricsRecord]) -> Self {
        let last = metrics.last();
        SweepCell {
            noise,
            optimizer,
            gap: gap_summary(metrics),
            final_pristine_acc: last.and_then(|r| r.pristine_acc),
            final_corrupt_acc: last.and_then(|r| r.corrupt_acc),
        }
    }

    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let g = self.gap.as_ref();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.noise,
            self.optimizer,
            g.map(|g| g.final_epoch.to_string()).unwrap_or_default(),
            o(g.map(|g| g.final_train_acc)),
            o(g.map(|g| g.final_test_acc)),
            o(g.map(|g| g.final_gap)),
            g.map(|g| g.best_test_epoch.to_string()).unwrap_or_default(),
            o(g.map(|g| g.best_test_acc)),
            o(g.map(|g| g.gap_at_best_test)),
            o(self.final_pristine_acc),
            o(self.final_corrupt_acc),
        )
    }
}

pub fn sweep_summary_csv(cells: &[SweepCell]) -> String {
    let mut out = format!("{SWEEP_SUMMARY_HEADER}\n");
    for c in cells {
        out.push_str(&c.csv_row());
        out.push('\n');
    }
    out
}

/// Noise × optimizer grid on the current rayon pool. Every optimizer sees
/// the same corrupted copy and initialization at a given noise level.
pub fn cmd_sweep(cfg: &RunConfigFile, out: &Path) -> Result<PathBuf> {
    let sweep = &cfg.experiments.sweep;
    let base = load_base_dataset(&cfg.dataset)?;
    let clean = noisy_copy(&base, 0.0, cfg.dataset.eval_cap, cfg.dataset.noise_seed)?;
    let manifest = clean.manifest(cfg.dataset.source.clone());
    let dir = run_dir(out, "sweep", cfg)?;
    let grid: Vec<(f64, OptimizerKind)> = sweep
        .noise_levels
        .iter()
        .flat_map(|&p| sweep.optimizers.iter().map(move |&k| (p, k)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(p, kind)| {
            let ds = noisy_copy(&base, p, cfg.dataset.eval_cap, cfg.dataset.noise_seed)?;
            let cell_dir = dir.join(cell_name(p, kind));
            fs::create_dir_all(&cell_dir)?;
            let options = RunOptions {
                record_wall_time: cfg.run.record_wall_time,
                ..RunOptions::default()
            };
            let (metrics, _) = train_to_dir(&ds, cfg, &cfg.optimizer.with_kind(kind), &cell_dir, options)?;
            Ok((SweepCell::from_metrics(p, kind, &metrics), NoiseRun {
                noise: p,
                gap: gap_summary(&metrics),
                metrics,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let summary: Vec<SweepCell> = cells.iter().map(|(c, _)| c.clone()).collect();
    fs::write(dir.join("summary.csv"), sweep_summary_csv(&summary))?;

    let protocol = NoiseProtocol::default();
    let mut ascending = sweep.noise_levels.clone();
    ascending.sort_by(f64::total_cmp);
    let mut predictions = serde_json::Map::new();
    for &kind in &sweep.optimizers {
        let runs: Vec<NoiseRun> = ascending
            .iter()
            .flat_map(|&p| {
                cells
                    .iter()
                    .filter(move |(c, _)| c.optimizer == kind && c.noise == p)
                    .map(|(_, r)| r.clone())
            })
            .collect();
        let pred = NoisePredictions::from_runs(
            &runs,
            protocol.train_threshold,
            protocol.pristine_threshold,
            protocol.memorized_threshold,
        );
        predictions.insert(kind.to_string(), serde_json::to_value(pred)?);
    }
    write_json(&dir.join("predictions.json"), &predictions)?;
    write_manifest(&dir, "sweep", cfg, &manifest, &["summary.csv", "predictions.json"])?;
    Ok(dir)
}

/// Easy/hard split of the configured dataset; writes both id lists.
pub fn cmd_split(cfg: &RunConfigFile, out: &Path) -> Result<PathBuf> {
    let (ds, manifest) = build_dataset(&cfg.dataset)?;
    let s = &cfg.experiments.split;
    let split = easy_hard_split(&ds, &cfg.model, &cfg.optimizer, s.threshold, s.max_epochs, cfg.run.seed)?;
    let dir = run_dir(out, "split", cfg)?;
    write_ids(&dir.join("easy_ids.txt"), &split.easy)?;
    write_ids(&dir.join("hard_ids.txt"), &split.hard)?;
    write_json(
        &dir.join("split.json"),
        &json!({
            "threshold": split.threshold,
            "epoch": split.epoch,
            "train_acc": split.train_acc,
            "easy": split.easy.len(),
            "hard": split.hard.len(),
        }),
    )?;
    write_manifest(&dir, "split", cfg, &manifest, &["easy_ids.txt", "hard_ids.txt", "split.json"])?;
    Ok(dir)
}

pub const BUCKET_CSV_HEADER: &str = "difficulty,rm3_accuracy,count";

/// Difficulty over `experiments.difficulty.runs` splits, then training
/// accuracy per difficulty bucket of an RM3 run with the same settings.
pub fn cmd_difficulty(cfg: &RunConfigFile, out: &Path) -> Result<PathBuf> {
    let (ds, manifest) = build_dataset(&cfg.dataset)?;
    let s = &cfg.experiments.split;
    let d = &cfg.experiments.difficulty;
    let seeds: Vec<u64> = (0..d.runs as u64).map(|r| derive_seed(cfg.run.seed, r + 1)).collect();
    let table = difficulty_score(&ds, &cfg.model, &cfg.optimizer, s.threshold, s.max_epochs, &seeds)?;
    let dir = run_dir(out, "difficulty", cfg)?;
    fs::write(dir.join("difficulty.csv"), table.to_csv())?;

    let rm3 = d
        .rm3_optimizer
        .clone()
        .unwrap_or_else(|| cfg.optimizer.clone())
        .with_kind(OptimizerKind::Rm3);
    let mut rm3_cfg = cfg.clone();
    rm3_cfg.run.epochs = d.rm3_epochs.unwrap_or(cfg.run.epochs);
    let (_, ckpt) = train_to_dir(&ds, &rm3_cfg, &rm3, &dir, RunOptions::default())?;
    let buckets = accuracy_by_difficulty(&table, &ds, &ckpt.model()?)?;
    let mut csv = format!("{BUCKET_CSV_HEADER}\n");
    for b in &buckets {
        let acc = b.accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{}", b.difficulty, acc, b.count);
    }
    fs::write(dir.join("buckets.csv"), csv)?;
    write_manifest(
        &dir,
        "difficulty",
        cfg,
        &manifest,
        &["difficulty.csv", "metrics.csv", "checkpoint.json", "buckets.csv"],
    )?;
    Ok(dir)
}

/// Easy/hard cross-generalization; writes the 2×2 accuracy table.
pub fn cmd_xgen(cfg: &RunConfigFile, out: &Path) -> Result<PathBuf> {
    let (ds, manifest) = build_dataset(&cfg.dataset)?;
    let s = &cfg.experiments.split;
    let x = &cfg.experiments.xgen;
    let report = cross_generalization(
        &ds,
        &cfg.model,
        &cfg.optimizer,
        s.threshold,
        s.max_epochs,
        &x.sizes,
        x.epochs.unwrap_or(cfg.run.epochs),
        cfg.run.seed,
    )?;
    let dir = run_dir(out, "xgen", cfg)?;
    fs::write(dir.join("xgen.csv"), report.to_csv())?;
    fs::write(dir.join("easy_metrics.csv"), crate::harness::metrics_to_csv(&report.easy_metrics))?;
    fs::write(dir.join("hard_metrics.csv"), crate::harness::metrics_to_csv(&report.hard_metrics))?;
    write_json(
        &dir.join("xgen.json"),
        &json!({
            "easy_on_easy": report.easy_on_easy,
            "easy_on_hard": report.easy_on_hard,
            "hard_on_easy": report.hard_on_easy,
            "hard_on_hard": report.hard_on_hard,
            "sizes": report.sizes,
            "split_epoch": report.split_epoch,
            "split_train_acc": report.split_train_acc,
        }),
    )?;
    write_manifest(
        &dir,
        "xgen",
        cfg,
        &manifest,
        &["xgen.csv", "xgen.json", "easy_metrics.csv", "hard_metrics.csv"],
    )?;
    Ok(dir)
}

pub fn cmd_verify() -> Result<Vec<CheckResult>> {
    verify::run_all()
}

#[derive(Debug, Parser)]
#[command(name = "cgrad", version, about = "Robust gradient aggregation experiments")]
pub struct Args {
    /// JSON run config, or a run manifest to repeat.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel runs (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Parent directory for run directories, overriding `run.output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and persist the dataset with its manifest.
    Gen,
    /// Train once; writes metrics.csv and checkpoint.json.
    Train {
        /// Continue from a checkpoint of an earlier run of this config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Noise × optimizer grid with a generalization-gap summary.
    Sweep,
    /// Easy/hard split at the configured accuracy threshold.
    Split,
    /// Difficulty scores and per-bucket RM3 accuracy.
    Difficulty,
    /// Easy/hard cross-generalization table.
    Xgen,
    /// Run the built-in kernel and gradient checks.
    Verify,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train { .. } => "train",
            Command::Sweep => "sweep",
            Command::Split => "split",
            Command::Difficulty => "difficulty",
            Command::Xgen => "xgen",
            Command::Verify => "verify",
        }
    }
}

fn dispatch(args: &Args) -> Result<i32> {
    if let Command::Verify = args.command {
        let checks = cmd_verify()?;
        for c in &checks {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        return Ok(if checks.iter().all(|c| c.passed) { 0 } else { EXIT_CHECKS_FAILED });
    }
    let path = args
        .config
        .as_deref()
        .ok_or_else(|| Error::Usage(format!("{} needs --config", args.command.name())))?;
    let cfg = RunConfigFile::load(path)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.run.output_dir));
    let dir = match &args.command {
        Command::Gen => cmd_gen(&cfg, &out)?,
        Command::Train { resume } => cmd_train(&cfg, &out, resume.as_deref())?,
        Command::Sweep => cmd_sweep(&cfg, &out)?,
        Command::Split => cmd_split(&cfg, &out)?,
        Command::Difficulty => cmd_difficulty(&cfg, &out)?,
        Command::Xgen => cmd_xgen(&cfg, &out)?,
        Command::Verify => unreachable!(),
    };
    println!("{}", dir.display());
    Ok(0)
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Errors go to stderr as a single JSON object.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let run = || dispatch(&args);
    let result = match args.jobs {
        Some(0) => Err(Error::Usage("--jobs must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Usage(e.to_string()))
            .and_then(|pool| pool.install(run)),
        None => run(),
    };
    result.unwrap_or_else(|e| {
        eprintln!("{}", error_json(&e));
        exit_code(&e)
    })
}
