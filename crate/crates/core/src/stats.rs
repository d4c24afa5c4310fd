//! Statistical kernels shared by every analysis stage.
//!
//! Correlations never fail on zero variance. They return `r = 0` with the
//! `degenerate` flag set, so dead SAE atoms and constant projections rank
//! last instead of aborting a run.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Seeded generator used everywhere randomness is needed.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child seed for task `index` of a run seeded with `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Set when either input had zero variance; `r` is then 0.
    pub degenerate: bool,
}

impl Correlation {
    const DEGENERATE: Correlation = Correlation {
        r: 0.0,
        degenerate: true,
    };
}

fn check_pair(x_len: usize, y_len: usize) -> Result<()> {
    if x_len != y_len {
        return Err(Error::invalid(format!(
            "correlation inputs differ in length ({x_len} vs {y_len})"
        )));
    }
    if x_len < 2 {
        return Err(Error::invalid("correlation needs at least 2 observations"));
    }
    Ok(())
}

pub fn mean<T: Scalar>(x: &[T]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.to_f64_lossless()).sum::<f64>() / x.len() as f64
}

/// Population variance (divides by n).
pub fn variance<T: Scalar>(x: &[T]) -> f64 {
    let m = mean(x);
    if x.is_empty() {
        return 0.0;
    }
    x.iter()
        .map(|v| {
            let d = v.to_f64_lossless() - m;
            d * d
        })
        .sum::<f64>()
        / x.len() as f64
}

pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<Correlation> {
    check_pair(x.len(), y.len())?;
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a.to_f64_lossless() - mx;
        let dy = b.to_f64_lossless() - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 || !(sxx * syy).is_finite() {
        return Ok(Correlation::DEGENERATE);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Correlation {
        r,
        degenerate: false,
    })
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks<T: Scalar>(x: &[T]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("ranked values must be comparable"));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn spearman<T: Scalar>(x: &[T], y: &[T]) -> Result<Correlation> {
    check_pair(x.len(), y.len())?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    /// NaN when the target is constant.
    pub r2: f64,
    pub pearson_r: f64,
    pub spearman_rho: f64,
}

pub fn regression_metrics<T: Scalar>(pred: &[T], target: &[T]) -> Result<MetricsReport> {
    check_pair(pred.len(), target.len())?;
    let n = pred.len() as f64;
    let mt = mean(target);
    let (mut sse, mut sae, mut sst) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &t) in pred.iter().zip(target) {
        let (p, t) = (p.to_f64_lossless(), t.to_f64_lossless());
        let e = p - t;
        sse += e * e;
        sae += e.abs();
        sst += (t - mt) * (t - mt);
    }
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN };
    Ok(MetricsReport {
        rmse: (sse / n).sqrt(),
        mae: sae / n,
        r2,
        pearson_r: pearson(pred, target)?.r,
        spearman_rho: spearman(pred, target)?.r,
    })
}

/// Huber loss: quadratic inside `[-delta, delta]`, linear outside.
pub fn huber_loss(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber_loss`] with respect to the residual.
pub fn huber_grad(residual: f64, delta: f64) -> f64 {
    residual.clamp(-delta, delta)
}

/// Centers every column and divides by its population standard deviation.
/// Zero-variance columns become all zeros.
pub fn zscore_columns<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let (n, d) = m.shape();
    let means = m.column_means();
    let mut var = vec![0.0f64; d];
    for r in m.row_iter() {
        for ((v, &x), &mu) in var.iter_mut().zip(r).zip(&means) {
            let dx = x.to_f64_lossless() - mu;
            *v += dx * dx;
        }
    }
    let sd: Vec<f64> = var.iter().map(|v| (v / n.max(1) as f64).sqrt()).collect();
    Matrix::from_fn(n, d, |i, j| {
        if sd[j] > 0.0 {
            T::of((m.get(i, j).to_f64_lossless() - means[j]) / sd[j])
        } else {
            T::zero()
        }
    })
}

/// Uniform random permutation of `labels` (Fisher-Yates over a seeded generator).
pub fn shuffled_labels<L: Clone>(labels: &[L], seed: u64) -> Vec<L> {
    let mut out = labels.to_vec();
    out.shuffle(&mut rng_from_seed(seed));
    out
}
