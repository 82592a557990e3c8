//! Plain SGD at label-noise levels 0, 25, 50, 75 and 100%, checked against
//! three predictions: noisier data takes longer to fit, pristine examples
//! are fitted before corrupt ones, and pristine examples themselves slow
//! down as noise grows.
//!
//! cargo run --release --example noise_sweep -- [epochs]

use cgrad::harness::{desk, noise_sweep, NoiseProtocol};

fn show(v: &[Option<usize>]) -> String {
    v.iter().map(|e| e.map_or("-".into(), |e| e.to_string())).collect::<Vec<_>>().join(" / ")
}

fn main() -> cgrad::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(desk::SWEEP_EPOCHS);
    let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
    let sweep = noise_sweep(
        &desk::clean_dataset()?,
        &levels,
        &desk::net(),
        &desk::baseline_optimizer(),
        epochs,
        desk::RUN_SEED,
        &NoiseProtocol::default(),
    )?;
    for run in &sweep.runs {
        let last = run.metrics.last();
        println!(
            "p = {:.2}: final train {:.3}, test {:.3}",
            run.noise,
            last.map_or(f64::NAN, |r| r.train_acc),
            last.map_or(f64::NAN, |r| r.test_acc)
        );
    }
    let p = &sweep.predictions;
    println!("epochs to {:.0}% train accuracy: {}", 100.0 * p.train_threshold, show(&p.epochs_to_train_threshold));
    println!("epochs to {:.0}% pristine accuracy: {}", 100.0 * p.pristine_threshold, show(&p.epochs_to_pristine_threshold));
    println!("learning slows with noise:  {}", p.learning_slows_with_noise);
    println!("pristine learned first:     {}", p.pristine_first);
    println!("pristine slows with noise:  {}", p.pristine_slows_with_noise);
    Ok(())
}
