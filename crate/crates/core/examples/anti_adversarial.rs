//! Fits fully random labels from a random initialization and from weights
//! first trained on the true labels, and compares how many epochs each
//! needs to reach 90% train accuracy.
//!
//! cargo run --release --example anti_adversarial

use cgrad::harness::{anti_adversarial, desk, AntiAdversarialConfig};

fn main() -> cgrad::Result<()> {
    let clean = desk::noisy_dataset(&desk::clean_dataset()?, 0.0)?;
    let random_labels = desk::noisy_dataset(&clean, 1.0)?;
    let cfg = AntiAdversarialConfig::default();
    let r = anti_adversarial(&clean, &random_labels, &desk::net(), &desk::baseline_optimizer(), &cfg, desk::RUN_SEED)?;
    println!("pre-training: {} epochs to train accuracy {:.3}", r.pretrain_epochs, r.pretrain_train_acc);
    let show = |e: Option<usize>| e.map_or(format!("not within {}", cfg.budget), |e| e.to_string());
    println!("epochs to {:.0}% on random labels", 100.0 * r.threshold);
    println!("  cold start: {}", show(r.epochs_cold));
    println!("  warm start: {}", show(r.epochs_warm));
    Ok(())
}
