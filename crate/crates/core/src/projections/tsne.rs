use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pca::{pca_fit, pca_project};
use super::{ProjectionMethod, ProjectionResult};
use crate::distance::pairwise_euclidean;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::stats::rng_from_seed;

/// Exact t-SNE settings. Defaults follow the reference implementation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub n_iter: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Iteration at which momentum switches to `final_momentum`.
    pub momentum_switch: usize,
    /// Seeds the second initial axis when the input has fewer than two principal axes.
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            n_iter: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

const PERPLEXITY_TOL: f64 = 1e-5;
const MIN_GAIN: f64 = 0.01;
const INIT_SCALE: f64 = 1e-4;

/// Conditional distributions `p_{j|i}` with per-row Gaussian precision found by
/// bisection so that `exp(H(P_i))` matches `perplexity`. Returns the row-major
/// `n x n` matrix and the achieved perplexity of every row.
pub fn conditional_probabilities(sq_dist: &Matrix<f64>, perplexity: f64) -> (Matrix<f64>, Vec<f64>) {
    let n = sq_dist.nrows();
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = sq_dist.row(i);
            let d_min = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
            let eval = |beta: f64| {
                let mut p = vec![0.0; n];
                let mut sum = 0.0;
                let mut weighted = 0.0;
                for j in 0..n {
                    if j != i {
                        let shifted = d[j] - d_min;
                        let v = (-beta * shifted).exp();
                        p[j] = v;
                        sum += v;
                        weighted += shifted * v;
                    }
                }
                let entropy = sum.ln() + beta * weighted / sum;
                p.iter_mut().for_each(|v| *v /= sum);
                (p, entropy)
            };
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            let mut beta = 1.0;
            let (mut p, mut h) = eval(beta);
            for _ in 0..200 {
                if (h.exp() - perplexity).abs() < PERPLEXITY_TOL {
                    break;
                }
                if h > target {
                    lo = beta;
                    beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = 0.5 * (beta + lo);
                }
                (p, h) = eval(beta);
            }
            (p, h.exp())
        })
        .collect();
    let mut out = Matrix::zeros(n, n);
    let mut achieved = Vec::with_capacity(n);
    for (i, (p, perp)) in rows.into_iter().enumerate() {
        out.row_mut(i).copy_from_slice(&p);
        achieved.push(perp);
    }
    (out, achieved)
}

fn initial_embedding<T: Scalar>(m: &Matrix<T>, seed: u64) -> Vec<[f64; 2]> {
    let n = m.nrows();
    let k = 2.min(n.saturating_sub(1)).min(m.ncols());
    let mut coords = vec![[0.0; 2]; n];
    if k > 0 {
        if let Ok(proj) = pca_fit(m, k).and_then(|model| pca_project(&model, m, k)) {
            for (i, c) in coords.iter_mut().enumerate() {
                for a in 0..k {
                    c[a] = proj.coords.get(i, a).to_f64_lossless();
                }
            }
        }
    }
    let first: Vec<f64> = coords.iter().map(|c| c[0]).collect();
    let sd = crate::stats::variance(&first).sqrt();
    if sd == 0.0 {
        // constant input: every gradient vanishes at the origin
        return coords;
    }
    let s = INIT_SCALE / sd;
    let mut rng = rng_from_seed(seed);
    for c in coords.iter_mut() {
        for (a, v) in c.iter_mut().enumerate() {
            *v = if a < k { *v * s } else { INIT_SCALE * rng.sample::<f64, _>(StandardNormal) };
        }
    }
    coords
}

/// Exact (O(n^2) per iteration) t-SNE to two dimensions.
///
/// `trace` holds the KL divergence to the unexaggerated joint distribution
/// after every iteration.
pub fn tsne<T: Scalar>(m: &Matrix<T>, config: &TsneConfig) -> Result<ProjectionResult<T>> {
    let n = m.nrows();
    let perplexity = config.perplexity;
    if !(perplexity > 1.0 && perplexity < (n as f64 - 1.0) / 3.0) {
        return Err(Error::invalid(format!(
            "perplexity {perplexity} must lie in (1, (n-1)/3) = (1, {:.3}) for n = {n}",
            (n as f64 - 1.0) / 3.0
        )));
    }
    let dist = pairwise_euclidean(m).map(|d| d * d);
    let (cond, _) = conditional_probabilities(&dist, perplexity);
    let denom = 2.0 * n as f64;
    let p = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            ((cond.get(i, j) + cond.get(j, i)) / denom).max(1e-12)
        }
    });
    let p_sum: f64 = p.as_slice().iter().sum();
    let p_log_p: f64 = p.as_slice().iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum();

    let mut y = initial_embedding(m, config.seed);
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut trace = Vec::with_capacity(config.n_iter);

    for iter in 0..config.n_iter {
        let exaggeration = if iter < config.exaggeration_iters { config.early_exaggeration } else { 1.0 };
        let momentum = if iter < config.momentum_switch { config.initial_momentum } else { config.final_momentum };

        let z: f64 = (0..n)
            .into_par_iter()
            .map(|i| (0..n).filter(|&j| j != i).map(|j| student_t(y[i], y[j])).sum::<f64>())
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        let per_row: Vec<([f64; 2], f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                let mut p_log_num = 0.0;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let num = student_t(y[i], y[j]);
                    let pij = p.get(i, j);
                    let coeff = 4.0 * (exaggeration * pij - num / z) * num;
                    g[0] += coeff * (y[i][0] - y[j][0]);
                    g[1] += coeff * (y[i][1] - y[j][1]);
                    p_log_num += pij * num.ln();
                }
                (g, p_log_num)
            })
            .collect();
        // KL(P || Q) = sum p ln p - sum p ln num + ln Z * sum p
        let kl = p_log_p - per_row.iter().map(|r| r.1).sum::<f64>() + z.ln() * p_sum;
        if !kl.is_finite() {
            return Err(Error::Numeric(format!("t-SNE diverged at iteration {iter}")));
        }
        trace.push(kl);

        for i in 0..n {
            for a in 0..2 {
                let grad = per_row[i].0[a];
                let gain = &mut gains[i][a];
                *gain = if (grad > 0.0) != (update[i][a] > 0.0) { *gain + 0.2 } else { *gain * 0.8 };
                *gain = gain.max(MIN_GAIN);
                update[i][a] = momentum * update[i][a] - config.learning_rate * *gain * grad;
                y[i][a] += update[i][a];
            }
        }
        let mean = y.iter().fold([0.0; 2], |acc, c| [acc[0] + c[0], acc[1] + c[1]]);
        for c in y.iter_mut() {
            c[0] -= mean[0] / n as f64;
            c[1] -= mean[1] / n as f64;
        }
    }

    let final_kl = trace.last().copied().unwrap_or(f64::NAN);
    Ok(ProjectionResult {
        method: ProjectionMethod::Tsne,
        coords: Matrix::from_fn(n, 2, |i, a| T::of(y[i][a])),
        diagnostics: BTreeMap::from([("final_kl".to_string(), final_kl)]),
        trace,
    })
}

#[inline]
fn student_t(a: [f64; 2], b: [f64; 2]) -> f64 {
    1.0 / (1.0 + (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
}
