//! Winsorized SGD at several clipping levels on a noisy synthetic set.
//! Level 0 is plain SGD; larger levels clip more of each coordinate's
//! extreme per-example values before averaging.
//!
//! cargo run --release --example winsorized_sgd -- [epochs]

use cgrad::data::{gen_synthetic, SyntheticParams};
use cgrad::harness::{noisy_copy, train_run, NetConfig};
use cgrad::{OptimizerConfig, OptimizerKind};

fn main() -> cgrad::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(15);
    let params = SyntheticParams { per_class: 150, ..SyntheticParams::canonical() };
    let ds = noisy_copy(&gen_synthetic(&params)?, 0.5, 300, 3)?;
    let net = NetConfig { hidden_sizes: vec![128, 128], ..NetConfig::default() };
    println!("{:>2} {:>8} {:>8} {:>9} {:>8}", "s", "train", "test", "pristine", "corrupt");
    for s in [0, 2, 4, 6] {
        let mut opt = OptimizerConfig::new(OptimizerKind::Winsorized, 0.1, 16);
        opt.winsorize_s = Some(s);
        let run = train_run(&ds, &net, &opt, epochs, 1)?;
        let r = run.metrics.last().expect("at least one epoch");
        println!(
            "{s:>2} {:>8.3} {:>8.3} {:>9.3} {:>8.3}",
            r.train_acc,
            r.test_acc,
            r.pristine_acc.unwrap_or(f64::NAN),
            r.corrupt_acc.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
