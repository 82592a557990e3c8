//! Self-checks run by `cgrad verify`: each kernel against an independent
//! oracle (sorting, the sum-min-max identity, finite differences).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{
    coord_median_of_means, geometric_median, mean, median3, winsorized_sum, SuppressionFixture,
};
use crate::error::Result;
use crate::nn::{Activation, Batch, Mlp, ParamVector};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> ParamVector {
    ParamVector::from_vec((0..d).map(|_| rng.random_range(-scale..scale)).collect())
}

fn check_median3(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut sorted_ok = true;
    for _ in 0..10_000 {
        let [a, b, c] = [0, 1, 2].map(|_| random_vec(rng, 4, 1e3));
        let m = median3(&a, &b, &c)?;
        for j in 0..4 {
            let mut v = [a[j], b[j], c[j]];
            v.sort_by(f64::total_cmp);
            sorted_ok &= v[1] == m[j];
            let identity = a[j] + b[j] + c[j] - v[0] - v[2];
            worst = worst.max((identity - m[j]).abs());
        }
    }
    Ok(CheckResult {
        name: "median3 = sort median = sum - min - max",
        passed: sorted_ok && worst <= 1e-12 * 1e3,
        detail: format!("sorted match {sorted_ok}, max identity residual {worst:.3e}"),
    })
}

fn check_suppression(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut mean_moves = true;
    for _ in 0..100 {
        let b = rng.random_range(1..=10);
        let m = rng.random_range(3 * b..=30);
        let common = rng.random_range(1..=50);
        let d = rng.random_range(m + common..=1000);
        let fx = SuppressionFixture::random(rng, d, m, b, common)?;
        let grads = fx.batch_gradients();
        worst = worst.max(coord_median_of_means(&grads, 3)?.max_abs_diff(&fx.common));
        let plain = mean(&grads)?;
        mean_moves &= fx.batch_support().iter().all(|&j| plain[j] != fx.common[j]);
    }
    Ok(CheckResult {
        name: "median of 3 group means recovers the common component",
        passed: worst <= 1e-15 && mean_moves,
        detail: format!("max deviation {worst:.3e}, mean moved on every u_i coordinate: {mean_moves}"),
    })
}

fn check_winsorize(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let grads: Vec<ParamVector> = (0..32).map(|_| random_vec(rng, 50, 1.0)).collect();
    let mut sum = vec![0.0; 50];
    for g in &grads {
        for (s, v) in sum.iter_mut().zip(g.iter()) {
            *s += v;
        }
    }
    let s0_exact = winsorized_sum(&grads, 0)?.as_slice() == sum.as_slice();
    let three: Vec<ParamVector> = (0..3).map(|_| random_vec(rng, 50, 1.0)).collect();
    let w = winsorized_sum(&three, 1)?;
    let med = median3(&three[0], &three[1], &three[2])?;
    let worst = (0..50).map(|j| (w[j] - 3.0 * med[j]).abs()).fold(0.0, f64::max);
    Ok(CheckResult {
        name: "winsorized sum: s=0 is the plain sum, B=3 s=1 is 3·median",
        passed: s0_exact && worst <= 1e-12,
        detail: format!("s=0 bit-exact {s0_exact}, B=3 residual {worst:.3e}"),
    })
}

fn check_geometric_median() -> Result<CheckResult> {
    let pts: Vec<ParamVector> = [1.0, 2.0, 100.0]
        .iter()
        .map(|&v| ParamVector::from_vec(vec![v]))
        .collect();
    let gm = geometric_median(&pts, 1e-8, 10_000)?;
    let err = (gm.point[0] - 2.0).abs();
    Ok(CheckResult {
        name: "geometric median of {1, 2, 100} is 2",
        passed: err <= 1e-8,
        detail: format!("returned {} after {} iterations", gm.point[0], gm.iterations),
    })
}

/// Central finite differences of the mean loss, one coordinate at a time.
pub fn finite_difference_gradient(net: &Mlp, batch: &Batch, h: f64) -> Result<ParamVector> {
    let base = net.params();
    let mut probe = net.clone();
    let mut out = ParamVector::zeros(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p)?;
        let up = probe.loss(batch)?;
        p[i] = base[i] - h;
        probe.set_params(&p)?;
        let down = probe.loss(batch)?;
        out[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

pub fn gradient_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-8 || diff <= 1e-5 * analytic.abs().max(numeric.abs())
}

fn check_gradients(rng: &mut ChaCha8Rng, instances: usize) -> Result<CheckResult> {
    let mut failures = 0;
    let mut worst_mean_rel: f64 = 0.0;
    let mut first_failure = None;
    for k in 0..instances {
        let input = rng.random_range(2..6);
        let classes = rng.random_range(2..5);
        let mut sizes = vec![input];
        for _ in 0..rng.random_range(0..3) {
            sizes.push(rng.random_range(2..7));
        }
        sizes.push(classes);
        let act = if k % 2 == 0 {
            Activation::Relu
        } else {
            Activation::Tanh
        };
        // Random biases keep pre-activations off the ReLU kink at exactly 0.
        let mut net = Mlp::new(&sizes, act, rng.random())?;
        let len = net.param_count();
        net.set_params(&random_vec(rng, len, 1.0))?;
        let n = [1, 2, 3, 5][k % 4];
        let x = Array2::from_shape_fn((n, input), |_| rng.random_range(-2.0..2.0));
        let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let batch = Batch::new(x, y, (0..n as u64).collect())?;
        let (_, analytic) = net.batch_gradient(&batch)?;
        let numeric = finite_difference_gradient(&net, &batch, 1e-6)?;
        if let Some(i) = (0..analytic.len()).find(|&i| !gradient_close(analytic[i], numeric[i])) {
            failures += 1;
            first_failure.get_or_insert(format!(
                "; first: net {sizes:?} {act:?}, coordinate {i}: {} vs {}",
                analytic[i], numeric[i]
            ));
        }
        let (_, per) = net.per_example_gradients(&batch)?;
        let avg = mean(&per)?;
        let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        worst_mean_rel = worst_mean_rel.max(avg.max_abs_diff(&analytic) / scale);
    }
    Ok(CheckResult {
        name: "backprop gradients match finite differences; per-example mean = batch mean",
        passed: failures == 0 && worst_mean_rel <= 1e-12,
        detail: format!(
            "{failures}/{instances} nets with a mismatched coordinate, max mean residual {worst_mean_rel:.3e}{}",
            first_failure.unwrap_or_default()
        ),
    })
}

/// Runs every check with a fixed seed.
pub fn run_all() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    Ok(vec![
        check_median3(&mut rng)?,
        check_suppression(&mut rng)?,
        check_winsorize(&mut rng)?,
        check_geometric_median()?,
        check_gradients(&mut rng, 100)?,
    ])
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all().unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
