//! SGD, RA3, RM3 and M3 on the canonical dataset with half the labels
//! corrupted. The median-based rules fit the pristine examples but not
//! the corrupt ones; the rolling mean behaves like SGD.
//!
//! cargo run --release --example memorization -- [epochs] [sgd,ra3,rm3,m3]
//!
//! The full 100-epoch comparison takes around ten minutes on one core.

use cgrad::harness::{desk, train_run};
use cgrad::OptimizerKind;

fn main() -> cgrad::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().and_then(|a| a.parse().ok()).unwrap_or(desk::EPOCHS);
    let kinds: Vec<OptimizerKind> = match args.get(1) {
        Some(list) => list.split(',').map(str::parse).collect::<cgrad::Result<_>>()?,
        None => vec![OptimizerKind::Sgd, OptimizerKind::Ra3, OptimizerKind::Rm3, OptimizerKind::M3],
    };
    let noisy = desk::noisy_dataset(&desk::clean_dataset()?, 0.5)?;
    println!("{} train examples, {} corrupt", noisy.train.len(), noisy.corrupt_count());
    println!("{:<5} {:>5} {:>8} {:>8} {:>9} {:>8} {:>6}", "rule", "epoch", "train", "test", "pristine", "corrupt", "gap");
    for kind in kinds {
        let run = train_run(&noisy, &desk::net(), &desk::suppression_optimizer(kind), epochs, desk::RUN_SEED)?;
        for r in run.metrics.iter().filter(|r| r.epoch % 10 == 0 || r.epoch == epochs) {
            println!(
                "{:<5} {:>5} {:>8.3} {:>8.3} {:>9.3} {:>8.3} {:>6.3}",
                kind.name(),
                r.epoch,
                r.train_acc,
                r.test_acc,
                r.pristine_acc.unwrap_or(f64::NAN),
                r.corrupt_acc.unwrap_or(f64::NAN),
                r.gap()
            );
        }
    }
    Ok(())
}
