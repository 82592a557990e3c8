//! Trains on IDX files (the MNIST format).
//!
//! cargo run --release --example mnist_idx -- \
//!     train-images-idx3-ubyte train-labels-idx1-ubyte \
//!     t10k-images-idx3-ubyte t10k-labels-idx1-ubyte [epochs]
//!
//! Without arguments a small IDX set of noisy digit-like blobs is written to
//! a temporary directory and used instead.

use std::fs;
use std::path::{Path, PathBuf};

use cgrad::data::load_mnist;
use cgrad::harness::{train_run, NetConfig};
use cgrad::{OptimizerConfig, OptimizerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn write_idx(dir: &Path, name: &str, n: usize, rng: &mut ChaCha8Rng) -> (PathBuf, PathBuf) {
    let (rows, cols) = (8u32, 8u32);
    let mut images = vec![0, 0, 8, 3];
    for v in [n as u32, rows, cols] {
        images.extend(v.to_be_bytes());
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend((n as u32).to_be_bytes());
    for _ in 0..n {
        let class: u8 = rng.random_range(0..10);
        labels.push(class);
        for px in 0..rows * cols {
            // Each class lights a different pair of rows, plus speckle.
            let row = (px / cols) as u8;
            let on = row == class % 8 || row == (class + 3) % 8;
            let base: u8 = if on { 200 } else { 10 };
            images.push(base.saturating_add(rng.random_range(0..50)));
        }
    }
    let (img, lab) = (dir.join(format!("{name}-images")), dir.join(format!("{name}-labels")));
    fs::write(&img, images).unwrap();
    fs::write(&lab, labels).unwrap();
    (img, lab)
}

fn main() -> cgrad::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tmp = tempfile::tempdir()?;
    let (paths, epochs) = if args.len() >= 4 {
        let p: Vec<PathBuf> = args[..4].iter().map(PathBuf::from).collect();
        (p, args.get(4).and_then(|e| e.parse().ok()).unwrap_or(5))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = write_idx(tmp.path(), "train", 2000, &mut rng);
        let (c, d) = write_idx(tmp.path(), "test", 500, &mut rng);
        (vec![a, b, c, d], 5)
    };
    let ds = load_mnist(&paths[0], &paths[1], &paths[2], &paths[3])?;
    println!(
        "{} train / {} test images of {} pixels, {} classes",
        ds.train.len(),
        ds.test.len(),
        ds.input_dim,
        ds.num_classes
    );
    let net = NetConfig { hidden_sizes: vec![128], ..NetConfig::default() };
    let opt = OptimizerConfig::new(OptimizerKind::Sgd, 0.05, 32);
    let run = train_run(&ds, &net, &opt, epochs, 1)?;
    for r in &run.metrics {
        println!("epoch {:>3}  train {:.4}  test {:.4}", r.epoch, r.train_acc, r.test_acc);
    }
    Ok(())
}
