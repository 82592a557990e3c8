use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cgrad::cli::{self, RunConfigFile, SweepCell, SWEEP_SUMMARY_HEADER};
use cgrad::harness::{desk, metrics_from_csv, METRICS_CSV_HEADER};
use cgrad::OptimizerKind;
use serde_json::Value;

const CONFIGS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");

fn cgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgrad")).args(args).output().unwrap()
}

fn tiny() -> Value {
    serde_json::from_str(&fs::read_to_string(format!("{CONFIGS}/tiny.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).unwrap();
    p
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn error_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr not JSON: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn verify_passes() {
    let out = cgrad(&["verify"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{text}");
}

#[test]
fn zero_epochs_writes_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = tiny();
    v["run"]["epochs"] = 0.into();
    let cfg = write_config(tmp.path(), "c.json", &v);
    let out = tmp.path().join("out");
    let dir = run_dir(&cgrad(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert_eq!(fs::read_to_string(dir.join("metrics.csv")).unwrap(), format!("{METRICS_CSV_HEADER}\n"));
    assert!(dir.join("checkpoint.json").exists());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert!(manifest["tool_version"].as_str().unwrap().starts_with("cgrad v"));
    assert_eq!(manifest["dataset"]["dataset_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn errors_have_distinct_codes_and_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cgrad(&["train", "--config", tmp.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(cli::EXIT_IO));
    assert_eq!(error_of(&out)["error"], "io");

    let mut v = tiny();
    v["optimizer"]["momentum_typo"] = 0.5.into();
    let cfg = write_config(tmp.path(), "bad.json", &v);
    let out = cgrad(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(cli::EXIT_CONFIG));
    assert_eq!(error_of(&out)["exit_code"], cli::EXIT_CONFIG);

    fs::write(tmp.path().join("nope-img"), [0u8, 0, 8, 3, 0, 0]).unwrap();
    let mut v = tiny();
    v["dataset"]["source"] = serde_json::json!({
        "kind": "idx", "train_images": "nope-img", "train_labels": "nope-lab",
        "test_images": "nope-img", "test_labels": "nope-lab"
    });
    let cfg = write_config(tmp.path(), "idx.json", &v);
    let out = cgrad(&["gen", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(cli::EXIT_DATA));
    assert_eq!(error_of(&out)["error"], "ingestion");

    let mut v = tiny();
    v["optimizer"]["base_lr"] = 1e300.into();
    let cfg = write_config(tmp.path(), "hot.json", &v);
    let out = cgrad(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(cli::EXIT_DIVERGENCE));

    let out = cgrad(&["train"]);
    assert_eq!(out.status.code(), Some(cli::EXIT_CONFIG));
}

#[test]
fn idx_dataset_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, n: u32, offset: u8| {
        let mut img = vec![0, 0, 8, 3];
        img.extend(n.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        let mut lab = vec![0, 0, 8, 1];
        lab.extend(n.to_be_bytes());
        for i in 0..n {
            let c = ((i as u8) + offset) % 2;
            img.extend([255 * c, 0, 0, 255 * (1 - c)]);
            lab.push(c);
        }
        fs::write(tmp.path().join(format!("{name}-img")), img).unwrap();
        fs::write(tmp.path().join(format!("{name}-lab")), lab).unwrap();
    };
    write("train", 40, 0);
    write("test", 10, 1);
    let mut v = tiny();
    v["dataset"]["source"] = serde_json::json!({
        "kind": "idx", "train_images": "train-img", "train_labels": "train-lab",
        "test_images": "test-img", "test_labels": "test-lab"
    });
    v["dataset"]["noise"] = 0.0.into();
    v["optimizer"]["batch_size"] = 4.into();
    let cfg = write_config(tmp.path(), "idx.json", &v);
    let dir = run_dir(&cgrad(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]));
    let rows = metrics_from_csv(&fs::read_to_string(dir.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    // Relative paths resolve against the config file and are stored absolute.
    let again = RunConfigFile::load(&dir.join("manifest.json")).unwrap();
    cli::build_dataset(&again.dataset).unwrap();
}

#[test]
fn jobs_do_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &tiny());
    let run = |jobs: &str, out: &str| {
        let out = tmp.path().join(out);
        let dir = run_dir(&cgrad(&["sweep", "--config", cfg.to_str().unwrap(), "--jobs", jobs, "--out", out.to_str().unwrap()]));
        fs::read_to_string(dir.join("summary.csv")).unwrap()
    };
    assert_eq!(run("1", "a"), run("3", "b"));
}

#[test]
fn sweep_summary_follows_from_cell_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfigFile::from_json(&tiny().to_string()).unwrap();
    let dir = cli::cmd_sweep(&cfg, tmp.path()).unwrap();
    let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with(SWEEP_SUMMARY_HEADER));
    let mut rebuilt = Vec::new();
    for &p in &cfg.experiments.sweep.noise_levels {
        for &k in &cfg.experiments.sweep.optimizers {
            let csv = fs::read_to_string(dir.join(cli::cell_name(p, k)).join("metrics.csv")).unwrap();
            rebuilt.push(SweepCell::from_metrics(p, k, &metrics_from_csv(&csv).unwrap()));
        }
    }
    assert_eq!(cli::sweep_summary_csv(&rebuilt), summary);
    let predictions: Value = serde_json::from_str(&fs::read_to_string(dir.join("predictions.json")).unwrap()).unwrap();
    assert!(predictions.get("rm3").is_some());
}

#[test]
fn resume_continues_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let full = RunConfigFile::from_json(&tiny().to_string()).unwrap();
    let mut half = full.clone();
    half.run.epochs = 2;
    let whole = cli::cmd_train(&full, &tmp.path().join("full"), None).unwrap();
    let first = cli::cmd_train(&half, &tmp.path().join("first"), None).unwrap();
    let rest = cli::cmd_train(&full, &tmp.path().join("rest"), Some(&first.join("checkpoint.json"))).unwrap();

    let read = |d: &Path| fs::read_to_string(d.join("metrics.csv")).unwrap();
    let expected: Vec<String> = read(&whole).lines().map(String::from).collect();
    let stitched: Vec<String> = read(&first).lines().chain(read(&rest).lines().skip(1)).map(String::from).collect();
    assert_eq!(stitched, expected);
    assert_eq!(
        fs::read_to_string(whole.join("checkpoint.json")).unwrap(),
        fs::read_to_string(rest.join("checkpoint.json")).unwrap()
    );

    let mut other = full.clone();
    other.run.seed += 1;
    let err = cli::cmd_train(&other, &tmp.path().join("x"), Some(&first.join("checkpoint.json"))).unwrap_err();
    assert_eq!(cli::exit_code(&err), cli::EXIT_CONFIG);
}

#[test]
fn shipped_configs_match_presets() {
    for entry in fs::read_dir(CONFIGS).unwrap() {
        let path = entry.unwrap().path();
        RunConfigFile::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    let load = |n: &str| RunConfigFile::load(Path::new(&format!("{CONFIGS}/{n}"))).unwrap();
    let mem = load("memorization.json");
    assert_eq!(mem.optimizer, desk::suppression_optimizer(OptimizerKind::Sgd));
    assert_eq!(mem.model, desk::net());
    assert_eq!(mem.run.epochs, desk::EPOCHS);
    let sweep = load("noise_sweep.json");
    assert_eq!(sweep.optimizer, desk::baseline_optimizer());
    assert_eq!(sweep.run.epochs, desk::SWEEP_EPOCHS);
    let eh = load("easy_hard.json");
    assert_eq!(eh.optimizer, desk::baseline_optimizer());
    assert_eq!(eh.experiments.split.threshold, desk::SPLIT_THRESHOLD);
    assert_eq!(eh.experiments.difficulty.runs, desk::DIFFICULTY_RUNS);
    assert_eq!(
        eh.experiments.difficulty.rm3_optimizer,
        Some(desk::suppression_optimizer(OptimizerKind::Rm3))
    );
    for cfg in [mem, sweep, eh] {
        let ds = cli::load_base_dataset(&cfg.dataset).unwrap();
        assert_eq!(ds.digest(), desk::clean_dataset().unwrap().digest());
        assert_eq!(cfg.dataset.noise_seed, desk::NOISE_SEED);
        assert_eq!(cfg.run.seed, desk::RUN_SEED);
    }
}
