//! Stops a run halfway, round-trips the checkpoint through JSON, resumes,
//! and checks the second half matches an uninterrupted run exactly.

use cgrad::checkpoint::Checkpoint;
use cgrad::data::{gen_synthetic, SyntheticParams};
use cgrad::harness::{metrics_to_csv, noisy_copy, train_run, train_run_with, NetConfig, RunOptions};
use cgrad::{OptimizerConfig, OptimizerKind, Schedule};

fn main() -> cgrad::Result<()> {
    let params = SyntheticParams { per_class: 100, ..SyntheticParams::canonical() };
    let ds = noisy_copy(&gen_synthetic(&params)?, 0.25, 200, 9)?;
    let net = NetConfig { hidden_sizes: vec![64, 64], ..NetConfig::default() };
    let mut opt = OptimizerConfig::new(OptimizerKind::Rm3, 0.05, 16);
    opt.momentum = 0.5;
    opt.schedule = Schedule::StepDecay { period_epochs: 4, factor: 0.5 };
    let (total, half, seed) = (8, 4, 42);

    let full = train_run(&ds, &net, &opt, total, seed)?;
    let first = train_run(&ds, &net, &opt, half, seed)?;
    let json = Checkpoint::new(&first.model, &first.optimizer, half, seed).to_json()?;
    println!("checkpoint after {half} epochs: {} bytes of JSON", json.len());

    let ckpt = Checkpoint::from_json(&json)?;
    let resume = RunOptions {
        resume: Some((ckpt.model()?, ckpt.optimizer_state.clone().unwrap(), ckpt.epochs_done)),
        ..RunOptions::default()
    };
    let rest = train_run_with(&ds, &net, &opt, total, seed, resume, None::<&mut Vec<u8>>)?;

    let resumed: Vec<_> = first.metrics.iter().chain(&rest.metrics).cloned().collect();
    print!("{}", metrics_to_csv(&resumed));
    let same = metrics_to_csv(&resumed) == metrics_to_csv(&full.metrics)
        && rest.model.params() == full.model.params();
    println!("resumed run identical to uninterrupted run: {same}");
    if !same {
        std::process::exit(1);
    }
    Ok(())
}
