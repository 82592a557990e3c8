//! Plain mean against the robust aggregators on a batch with one gross
//! outlier.

use cgrad::aggregate::{coord_median, coord_median_of_means, geometric_median, mean, winsorized_sum};
use cgrad::ParamVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> cgrad::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = [1.0, -2.0, 0.5];
    let mut batch: Vec<ParamVector> = (0..12)
        .map(|_| {
            ParamVector::from_vec(
                truth.iter().map(|t| t + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect(),
            )
        })
        .collect();
    batch[4] = ParamVector::from_vec(vec![500.0, 500.0, -500.0]);

    let n = batch.len() as f64;
    let mut w = winsorized_sum(&batch, 1)?;
    w.scale(1.0 / n);
    let gm = geometric_median(&batch, 1e-10, 1000)?;
    let rows = [
        ("mean", mean(&batch)?),
        ("coordinate median", coord_median(&batch)?),
        ("median of 3 means", coord_median_of_means(&batch, 3)?),
        ("winsorized mean, s=1", w),
        ("geometric median", gm.point),
    ];
    println!("truth {truth:?}");
    for (name, v) in rows {
        let err = v.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        println!("{name:<22} {:>9.3} {:>9.3} {:>9.3}   error {err:.3}", v[0], v[1], v[2]);
    }
    Ok(())
}
