//! Per-example gradients `g_i = u_i + c` with disjoint supports: the
//! coordinate-wise median of three group means returns `c` exactly, while
//! the plain mean picks up every idiosyncratic `u_i`.

use cgrad::aggregate::{coord_median_of_means, mean, SuppressionFixture};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cgrad::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let fx = SuppressionFixture::random(&mut rng, 40, 12, 3, 6)?;
    let grads = fx.batch_gradients();
    let median = coord_median_of_means(&grads, 3)?;
    let avg = mean(&grads)?;

    println!("{} examples in 3 groups of {}, d = {}", grads.len(), fx.group_size, fx.d);
    println!("{:>5} {:>10} {:>10} {:>10}", "coord", "common", "mean", "median");
    for j in 0..fx.d {
        if fx.common[j] != 0.0 || avg[j] != 0.0 {
            println!("{j:>5} {:>10.4} {:>10.4} {:>10.4}", fx.common[j], avg[j], median[j]);
        }
    }
    println!("median - common: {:.1e}", median.max_abs_diff(&fx.common));
    println!("mean   - common: {:.1e}", avg.max_abs_diff(&fx.common));
    Ok(())
}
