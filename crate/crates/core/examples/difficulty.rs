//! Scores each training example by how many of R independent easy/hard
//! splits call it hard, then reports how well an RM3 run fits each score.
//!
//! cargo run --release --example difficulty -- [R]

use cgrad::harness::{accuracy_by_difficulty, derive_seed, desk, difficulty_score, train_run};
use cgrad::OptimizerKind;

fn main() -> cgrad::Result<()> {
    let runs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(desk::DIFFICULTY_RUNS);
    let ds = desk::clean_dataset()?;
    let seeds: Vec<u64> = (1..=runs as u64).map(|r| derive_seed(desk::RUN_SEED, r)).collect();
    let table = difficulty_score(
        &ds,
        &desk::net(),
        &desk::baseline_optimizer(),
        desk::SPLIT_THRESHOLD,
        desk::SPLIT_MAX_EPOCHS,
        &seeds,
    )?;
    let rm3 = desk::suppression_optimizer(OptimizerKind::Rm3);
    let run = train_run(&ds, &desk::net(), &rm3, desk::EPOCHS, desk::RUN_SEED)?;
    println!("{:>10} {:>13} {:>6}", "difficulty", "rm3 accuracy", "count");
    for b in accuracy_by_difficulty(&table, &ds, &run.model)? {
        let acc = b.accuracy.map_or("-".into(), |a| format!("{:.2}%", 100.0 * a));
        println!("{:>10} {:>13} {:>6}", b.difficulty, acc, b.count);
    }
    Ok(())
}
