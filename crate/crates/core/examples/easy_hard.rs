//! Splits the clean training set into examples learned by the time train
//! accuracy first reaches 50% (easy) and the rest (hard), then trains one
//! model on each group and evaluates both on held-out easy and hard
//! examples.
//!
//! cargo run --release --example easy_hard

use cgrad::harness::{cross_generalization_from_split, desk, easy_hard_split, XGenSizes};

fn main() -> cgrad::Result<()> {
    let ds = desk::clean_dataset()?;
    let split = easy_hard_split(
        &ds,
        &desk::net(),
        &desk::baseline_optimizer(),
        desk::SPLIT_THRESHOLD,
        desk::SPLIT_MAX_EPOCHS,
        desk::RUN_SEED,
    )?;
    println!(
        "split after epoch {} at train accuracy {:.3}: {} easy, {} hard",
        split.epoch,
        split.train_acc,
        split.easy.len(),
        split.hard.len()
    );
    let report = cross_generalization_from_split(
        &ds,
        &split,
        &desk::net(),
        &desk::baseline_optimizer(),
        &XGenSizes::default(),
        desk::XGEN_EPOCHS,
        desk::RUN_SEED,
    )?;
    let [et, ee, ht, he] = report.sizes;
    println!("e-train {et}, e-test {ee}, h-train {ht}, h-test {he}");
    println!("{:<12} {:>8} {:>8}", "trained on", "e-test", "h-test");
    println!("{:<12} {:>8.3} {:>8.3}", "easy", report.easy_on_easy, report.easy_on_hard);
    println!("{:<12} {:>8.3} {:>8.3}", "hard", report.hard_on_easy, report.hard_on_hard);
    Ok(())
}
