//! Robust aggregation kernels over collections of gradient vectors.
//!
//! Every kernel is coordinate-wise except [`geometric_median`]. All loops
//! sum in input order, so results are reproducible bit-for-bit.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ParamVector;

fn common_len(grads: &[ParamVector], what: &str) -> Result<usize> {
    let first = grads
        .first()
        .ok_or_else(|| Error::Usage(format!("{what}: empty input")))?;
    let d = first.len();
    if let Some(bad) = grads.iter().find(|g| g.len() != d) {
        return Err(Error::Usage(format!(
            "{what}: length mismatch ({} vs {d})",
            bad.len()
        )));
    }
    Ok(d)
}

/// Coordinate-wise arithmetic mean.
pub fn mean(grads: &[ParamVector]) -> Result<ParamVector> {
    let d = common_len(grads, "mean")?;
    let mut out = vec![0.0; d];
    for g in grads {
        for (o, v) in out.iter_mut().zip(g.iter()) {
            *o += v;
        }
    }
    let n = grads.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(ParamVector::from_vec(out))
}

#[inline]
pub(crate) fn mid3(a: f64, b: f64, c: f64) -> f64 {
    if a <= b {
        if b <= c {
            b
        } else if a <= c {
            c
        } else {
            a
        }
    } else if a <= c {
        a
    } else if b <= c {
        c
    } else {
        b
    }
}

/// Coordinate-wise median of three vectors, by comparison selection.
pub fn median3(a: &ParamVector, b: &ParamVector, c: &ParamVector) -> Result<ParamVector> {
    if a.len() != b.len() || a.len() != c.len() {
        return Err(Error::Usage(format!(
            "median3: length mismatch ({}, {}, {})",
            a.len(),
            b.len(),
            c.len()
        )));
    }
    Ok(ParamVector::from_vec(
        a.iter()
            .zip(b.iter())
            .zip(c.iter())
            .map(|((&x, &y), &z)| mid3(x, y, z))
            .collect(),
    ))
}

/// Median of a scratch slice; even lengths average the two middle values.
fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_unstable_by(f64::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Coordinate-wise median.
pub fn coord_median(grads: &[ParamVector]) -> Result<ParamVector> {
    let d = common_len(grads, "coord_median")?;
    if grads.len() == 3 {
        return median3(&grads[0], &grads[1], &grads[2]);
    }
    let mut scratch = vec![0.0; grads.len()];
    let out = (0..d)
        .map(|i| {
            for (s, g) in scratch.iter_mut().zip(grads) {
                *s = g[i];
            }
            median_in_place(&mut scratch)
        })
        .collect();
    Ok(ParamVector::from_vec(out))
}

/// Splits `grads` into `k` contiguous groups of equal size, averages each
/// group, then takes the coordinate-wise median across the group means.
pub fn coord_median_of_means(grads: &[ParamVector], k: usize) -> Result<ParamVector> {
    common_len(grads, "coord_median_of_means")?;
    if k == 0 || grads.len() % k != 0 {
        return Err(Error::Usage(format!(
            "coord_median_of_means: {} gradients cannot be split into {k} equal groups",
            grads.len()
        )));
    }
    let size = grads.len() / k;
    let means = grads
        .chunks(size)
        .map(mean)
        .collect::<Result<Vec<_>>>()?;
    if k == 1 {
        return Ok(means.into_iter().next().unwrap());
    }
    coord_median(&means)
}

/// Per coordinate, clips each value into [(s+1)-th smallest, (s+1)-th
/// largest] and sums. `s = 0` is the plain sum.
pub fn winsorized_sum(per_example: &[ParamVector], s: usize) -> Result<ParamVector> {
    let d = common_len(per_example, "winsorized_sum")?;
    let n = per_example.len();
    if 2 * s >= n {
        return Err(Error::Usage(format!(
            "winsorized_sum: level s={s} needs more than {} examples, got {n}",
            2 * s
        )));
    }
    if s == 0 {
        let mut out = vec![0.0; d];
        for g in per_example {
            for (o, v) in out.iter_mut().zip(g.iter()) {
                *o += v;
            }
        }
        return Ok(ParamVector::from_vec(out));
    }
    let mut scratch = vec![0.0; n];
    let out = (0..d)
        .map(|i| {
            for (x, g) in scratch.iter_mut().zip(per_example) {
                *x = g[i];
            }
            scratch.sort_unstable_by(f64::total_cmp);
            let (lo, hi) = (scratch[s], scratch[n - 1 - s]);
            // Sum in the caller's order so the result does not depend on sorting.
            per_example.iter().map(|g| g[i].clamp(lo, hi)).sum()
        })
        .collect();
    Ok(ParamVector::from_vec(out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometricMedian {
    pub point: ParamVector,
    pub iterations: usize,
    /// True when the iterate met a data point and was snapped to it.
    pub snapped: bool,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Σ‖y − x_i‖₂.
pub fn sum_of_distances(y: &ParamVector, points: &[ParamVector]) -> f64 {
    points.iter().map(|p| dist(y.as_slice(), p.as_slice())).sum()
}

/// Weiszfeld iteration started from the coordinate-wise mean.
///
/// Stops when a step moves less than `tol` or after `max_iter` steps. If
/// an iterate lands within `tol` of a data point, that point is returned.
pub fn geometric_median(points: &[ParamVector], tol: f64, max_iter: usize) -> Result<GeometricMedian> {
    let d = common_len(points, "geometric_median")?;
    if !(tol > 0.0) {
        return Err(Error::Usage(format!("geometric_median: tol must be > 0, got {tol}")));
    }
    let mut y = mean(points)?;
    let mut iterations = 0;
    while iterations < max_iter {
        if let Some(p) = points.iter().find(|p| dist(y.as_slice(), p.as_slice()) < tol) {
            return Ok(GeometricMedian {
                point: p.clone(),
                iterations,
                snapped: true,
            });
        }
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for p in points {
            let w = 1.0 / dist(y.as_slice(), p.as_slice());
            den += w;
            for (n, v) in num.iter_mut().zip(p.iter()) {
                *n += w * v;
            }
        }
        num.iter_mut().for_each(|n| *n /= den);
        let next = ParamVector::from_vec(num);
        let step = dist(next.as_slice(), y.as_slice());
        y = next;
        iterations += 1;
        if step < tol {
            break;
        }
    }
    if let Some(p) = points.iter().find(|p| dist(y.as_slice(), p.as_slice()) < tol) {
        return Ok(GeometricMedian {
            point: p.clone(),
            iterations,
            snapped: true,
        });
    }
    Ok(GeometricMedian {
        point: y,
        iterations,
        snapped: false,
    })
}

/// Per-example gradients `g_i = u_i + c` where the supports of the `u_i`
/// and of `c` are pairwise disjoint coordinate sets.
#[derive(Clone, Debug)]
pub struct SuppressionFixture {
    pub d: usize,
    pub common: ParamVector,
    pub idiosyncratic: Vec<ParamVector>,
    pub group_size: usize,
}

impl SuppressionFixture {
    /// Random fixture with `m` idiosyncratic vectors, each with a support of
    /// at least one coordinate, and a common component with
    /// `common_support` coordinates. Values on each support are bounded
    /// away from zero in magnitude, in [0.5, 1.5].
    pub fn random<R: Rng>(
        rng: &mut R,
        d: usize,
        m: usize,
        group_size: usize,
        common_support: usize,
    ) -> Result<Self> {
        if group_size == 0 || 3 * group_size > m {
            return Err(Error::Usage(format!(
                "fixture needs 3·b ≤ m with b ≥ 1 (b={group_size}, m={m})"
            )));
        }
        if common_support + m > d {
            return Err(Error::Usage(format!(
                "fixture needs d ≥ m + |supp c| ({d} < {m} + {common_support})"
            )));
        }
        let mut coords: Vec<usize> = (0..d).collect();
        rand::seq::SliceRandom::shuffle(coords.as_mut_slice(), rng);
        let value = |rng: &mut R| {
            let mag = rng.random_range(0.5..=1.5);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        };
        let mut common = ParamVector::zeros(d);
        for &i in &coords[..common_support] {
            common[i] = value(rng);
        }
        // Every u_i gets one guaranteed coordinate; the rest are dealt out randomly.
        let free = &coords[common_support..];
        let mut owner: Vec<Option<usize>> = vec![None; free.len()];
        for (i, o) in owner.iter_mut().take(m).enumerate() {
            *o = Some(i);
        }
        for o in owner.iter_mut().skip(m) {
            if rng.random_bool(0.5) {
                *o = Some(rng.random_range(0..m));
            }
        }
        let mut idiosyncratic = vec![ParamVector::zeros(d); m];
        for (&coord, o) in free.iter().zip(&owner) {
            if let Some(i) = *o {
                idiosyncratic[i][coord] = value(rng);
            }
        }
        Ok(SuppressionFixture {
            d,
            common,
            idiosyncratic,
            group_size,
        })
    }

    pub fn m(&self) -> usize {
        self.idiosyncratic.len()
    }

    pub fn gradient(&self, i: usize) -> ParamVector {
        let mut g = self.idiosyncratic[i].clone();
        g.add_scaled(1.0, &self.common);
        g
    }

    /// Per-example gradients of a mini-batch made of the first `3·b` examples.
    pub fn batch_gradients(&self) -> Vec<ParamVector> {
        (0..3 * self.group_size).map(|i| self.gradient(i)).collect()
    }

    /// `c + (1/3b) Σ_{i in batch} u_i`: what the plain mean returns.
    pub fn expected_mean(&self) -> ParamVector {
        let n = 3 * self.group_size;
        let mut out = self.common.clone();
        for u in &self.idiosyncratic[..n] {
            out.add_scaled(1.0 / n as f64, u);
        }
        out
    }

    /// Coordinates where some batch member's `u_i` is non-zero.
    pub fn batch_support(&self) -> Vec<usize> {
        (0..self.d)
            .filter(|&j| {
                self.idiosyncratic[..3 * self.group_size]
                    .iter()
                    .any(|u| u[j] != 0.0)
            })
            .collect()
    }
}
