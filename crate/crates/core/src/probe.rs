//! Linear models on frozen activations: the Huber regression head and the
//! logistic / ridge probes whose weights become concept directions.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gdv::GroupLabels;
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::stats::{derive_seed, huber_grad, huber_loss, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    HuberHead,
    Logistic,
    Ridge,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::HuberHead => "huber_head",
            ModelKind::Logistic => "logistic",
            ModelKind::Ridge => "ridge",
        })
    }
}

/// `y = weights . x + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    pub kind: ModelKind,
    pub weights: Vec<T>,
    pub bias: T,
}

#[derive(Serialize, Deserialize)]
struct LinearModelFile {
    kind: ModelKind,
    d: usize,
    bias: f64,
    weights: Vec<f64>,
}

impl<T: Scalar> LinearModel<T> {
    fn from_f64(kind: ModelKind, weights: &[f64], bias: f64) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::Numeric(format!("{kind} fit produced non-finite weights")));
        }
        Ok(LinearModel {
            kind,
            weights: weights.iter().map(|&w| T::of(w)).collect(),
            bias: T::of(bias),
        })
    }

    pub fn d(&self) -> usize {
        self.weights.len()
    }

    pub fn predict_row(&self, x: &[T]) -> f64 {
        crate::scalar::dot(&self.weights, x) + self.bias.to_f64_lossless()
    }

    pub fn predict(&self, m: &Matrix<T>) -> Result<Vec<f64>> {
        if m.ncols() != self.d() {
            return Err(Error::invalid(format!(
                "model expects {} features, data has {}",
                self.d(),
                m.ncols()
            )));
        }
        Ok(m.row_iter().map(|r| self.predict_row(r)).collect())
    }

    /// JSON `{kind, d, bias, weights}`.
    pub fn to_json(&self) -> String {
        let file = LinearModelFile {
            kind: self.kind,
            d: self.d(),
            bias: self.bias.to_f64_lossless(),
            weights: self.weights.iter().map(|w| w.to_f64_lossless()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LinearModelFile =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad model json: {e}")))?;
        if file.weights.len() != file.d {
            return Err(Error::invalid(format!(
                "model declares d = {} but has {} weights",
                file.d,
                file.weights.len()
            )));
        }
        Self::from_f64(file.kind, &file.weights, file.bias)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Optimizer settings for the regression head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub warmup_fraction: f64,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub huber_delta: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Standardize features with train statistics; weights are folded back to raw space.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 30,
            patience: 5,
            warmup_fraction: 0.10,
            base_lr: 1e-3,
            weight_decay: 1e-2,
            grad_clip_norm: 1.0,
            huber_delta: 0.1,
            batch_size: 256,
            seed: 0,
            standardize: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::invalid("patience cannot exceed max_epochs"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup_fraction must be in [0, 1)"));
        }
        if self.batch_size == 0 || self.base_lr <= 0.0 || self.huber_delta <= 0.0 || self.grad_clip_norm <= 0.0 {
            return Err(Error::invalid("batch_size, base_lr, huber_delta and grad_clip_norm must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay must be nonnegative"));
        }
        Ok(())
    }
}

/// Learning rate at 0-based `step`: linear warmup reaching `base_lr` on the last
/// warmup step, then cosine decay reaching 0 on the final step.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> f64 {
    if step < warmup_steps {
        return base_lr * (step + 1) as f64 / warmup_steps as f64;
    }
    let decay_steps = total_steps.saturating_sub(warmup_steps);
    if decay_steps == 0 {
        return base_lr;
    }
    let progress = (step + 1 - warmup_steps) as f64 / decay_steps as f64;
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

/// Mean Huber loss of `w . x + b` against `y` and its gradient.
pub fn huber_objective(weights: &[f64], bias: f64, x: &[Vec<f64>], y: &[f64], delta: f64) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let r = row.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + bias - t;
        loss += huber_loss(r, delta);
        let g = huber_grad(r, delta);
        for (gwj, xj) in gw.iter_mut().zip(row) {
            *gwj += g * xj;
        }
        gb += g;
    }
    gw.iter_mut().for_each(|g| *g /= n);
    (loss / n, gw, gb / n)
}

fn mean_huber(rows: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, delta: f64) -> f64 {
    rows.iter()
        .zip(y)
        .map(|(r, &t)| huber_loss(r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b - t, delta))
        .sum::<f64>()
        / rows.len() as f64
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
        }
        let mut var = vec![0.0; d];
        for r in rows {
            var.iter_mut().zip(r).zip(&mean).for_each(|((v, x), m)| *v += (x - m).powi(2) / n);
        }
        let scale = var.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    fn apply(&self, rows: &mut [Vec<f64>]) {
        for r in rows {
            for ((x, m), s) in r.iter_mut().zip(&self.mean).zip(&self.scale) {
                *x = (*x - m) / s;
            }
        }
    }

    /// Maps weights on standardized features back to raw features.
    fn fold(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let raw: Vec<f64> = w.iter().zip(&self.scale).map(|(w, s)| w / s).collect();
        let shift: f64 = raw.iter().zip(&self.mean).map(|(w, m)| w * m).sum();
        (raw, b - shift)
    }
}

fn rows_f64<T: Scalar>(m: &Matrix<T>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().map(|x| x.to_f64_lossless()).collect()).collect()
}

/// Trains the linear CI head with AdamW, warmup + cosine learning rate,
/// per-step gradient clipping and early stopping on validation loss. The
/// returned weights are those of the best validation epoch.
pub fn train_regression_head<T: Scalar>(
    train: (&Matrix<T>, &[f64]),
    val: (&Matrix<T>, &[f64]),
    cfg: &TrainConfig,
) -> Result<(LinearModel<T>, TrainingLog)> {
    cfg.validate()?;
    let (tx, ty) = train;
    let (vx, vy) = val;
    if tx.nrows() != ty.len() || vx.nrows() != vy.len() {
        return Err(Error::invalid("feature and target row counts differ"));
    }
    if tx.nrows() == 0 || vx.nrows() == 0 {
        return Err(Error::invalid("train and validation sets must be nonempty"));
    }
    if tx.ncols() != vx.ncols() {
        return Err(Error::invalid(format!(
            "train has {} features, validation has {}",
            tx.ncols(),
            vx.ncols()
        )));
    }
    if ty.iter().chain(vy).any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::invalid("targets must lie in [0, 1]"));
    }

    let mut train_rows = rows_f64(tx);
    let mut val_rows = rows_f64(vx);
    let standardizer = cfg.standardize.then(|| Standardizer::fit(&train_rows));
    if let Some(s) = &standardizer {
        s.apply(&mut train_rows);
        s.apply(&mut val_rows);
    }

    let n = train_rows.len();
    let d = tx.ncols();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.max_epochs;
    let warmup_steps = (cfg.warmup_fraction * total_steps as f64).ceil() as usize;

    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut w = vec![0.0f64; d];
    let mut b = 0.0f64;
    let mut m_w = vec![0.0f64; d];
    let mut v_w = vec![0.0f64; d];
    let (mut m_b, mut v_b) = (0.0f64, 0.0f64);

    let mut best = (f64::INFINITY, w.clone(), b, 0usize);
    let mut epochs = Vec::new();
    let mut since_best = 0;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, epoch as u64)));
        let mut lr = 0.0;
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            let bx: Vec<Vec<f64>> = batch.iter().map(|&i| train_rows[i].clone()).collect();
            let by: Vec<f64> = batch.iter().map(|&i| ty[i]).collect();
            let (loss, mut gw, mut gb) = huber_objective(&w, b, &bx, &by, cfg.huber_delta);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "regression head loss is NaN at epoch {epoch}, step {batch_index}"
                )));
            }
            let gnorm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
            if gnorm > cfg.grad_clip_norm {
                let s = cfg.grad_clip_norm / gnorm;
                gw.iter_mut().for_each(|g| *g *= s);
                gb *= s;
            }
            lr = lr_schedule(step, total_steps, warmup_steps, cfg.base_lr);
            let t = (step + 1) as i32;
            let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
            for j in 0..d {
                m_w[j] = beta1 * m_w[j] + (1.0 - beta1) * gw[j];
                v_w[j] = beta2 * v_w[j] + (1.0 - beta2) * gw[j] * gw[j];
                let adam = (m_w[j] / c1) / ((v_w[j] / c2).sqrt() + eps);
                w[j] -= lr * (adam + cfg.weight_decay * w[j]);
            }
            m_b = beta1 * m_b + (1.0 - beta1) * gb;
            v_b = beta2 * v_b + (1.0 - beta2) * gb * gb;
            b -= lr * (m_b / c1) / ((v_b / c2).sqrt() + eps);
            step += 1;
        }
        let train_loss = mean_huber(&train_rows, ty, &w, b, cfg.huber_delta);
        let val_loss = mean_huber(&val_rows, vy, &w, b, cfg.huber_delta);
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::Numeric(format!("regression head loss is NaN after epoch {epoch}")));
        }
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if val_loss < best.0 {
            best = (val_loss, w.clone(), b, epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience && cfg.patience > 0 {
                stopped_early = true;
                break;
            }
        }
    }

    let (_, bw, bb, best_epoch) = best;
    let (bw, bb) = match &standardizer {
        Some(s) => s.fold(&bw, bb),
        None => (bw, bb),
    };
    let model = LinearModel::from_f64(ModelKind::HuberHead, &bw, bb)?;
    Ok((
        model,
        TrainingLog {
            epochs,
            best_epoch,
            stopped_early,
            total_steps,
            warmup_steps,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit<T> {
    pub model: LinearModel<T>,
    /// Regularized objective before the first and after every Newton step.
    pub loss_trace: Vec<f64>,
    pub grad_norm: f64,
}

const LOGISTIC_TOL: f64 = 1e-6;
const LOGISTIC_MAX_ITER: usize = 100;

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// L2-regularized logistic regression by damped Newton iterations.
///
/// Class 1 of `labels` is the positive class. `l2` defaults to `1/n`; zero
/// is rejected because separable data would drive the weights to infinity.
pub fn fit_logistic<T: Scalar>(m: &Matrix<T>, labels: &GroupLabels, l2: Option<f64>) -> Result<LogisticFit<T>> {
    let (n, d) = m.shape();
    if labels.n_classes() != 2 {
        return Err(Error::invalid(format!(
            "logistic probe needs exactly 2 classes, got {}",
            labels.n_classes()
        )));
    }
    if labels.len() != n {
        return Err(Error::invalid(format!("{n} rows but {} labels", labels.len())));
    }
    let l2 = l2.unwrap_or(1.0 / n as f64);
    if !(l2 > 0.0 && l2.is_finite()) {
        return Err(Error::invalid("logistic l2 penalty must be positive and finite"));
    }
    let p = d + 1;
    let x = DMatrix::from_fn(n, p, |i, j| if j == d { 1.0 } else { m.get(i, j).to_f64_lossless() });
    let y = DVector::from_iterator(n, labels.labels().iter().map(|&l| l as f64));

    let objective = |theta: &DVector<f64>| -> f64 {
        let z = &x * theta;
        let data: f64 = z.iter().zip(y.iter()).map(|(&z, &y)| softplus(z) - y * z).sum::<f64>() / n as f64;
        data + 0.5 * l2 * theta.rows(0, d).norm_squared()
    };

    let mut theta = DVector::zeros(p);
    let mut loss = objective(&theta);
    let mut trace = vec![loss];
    let mut grad_norm = f64::INFINITY;
    for _ in 0..LOGISTIC_MAX_ITER {
        let z = &x * &theta;
        let probs = z.map(sigmoid);
        let mut grad = x.tr_mul(&(&probs - &y)) / n as f64;
        for j in 0..d {
            grad[j] += l2 * theta[j];
        }
        grad_norm = grad.norm();
        if grad_norm < LOGISTIC_TOL {
            break;
        }
        let weights = probs.map(|q| q * (1.0 - q));
        let mut weighted = x.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        let mut hessian = x.tr_mul(&weighted) / n as f64;
        for j in 0..d {
            hessian[(j, j)] += l2;
        }
        // the bias is unpenalized; keep the system positive definite if a class is tiny
        hessian[(d, d)] += 1e-12;
        let direction = match hessian.clone().cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => -&grad,
        };
        let slope = grad.dot(&direction);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = &theta + &direction * t;
            let cand_loss = objective(&candidate);
            if cand_loss <= loss + 1e-4 * t * slope {
                theta = candidate;
                loss = cand_loss;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !loss.is_finite() {
            return Err(Error::Numeric("logistic loss became non-finite".into()));
        }
        if !accepted {
            break;
        }
        trace.push(loss);
    }
    let w: Vec<f64> = theta.rows(0, d).iter().copied().collect();
    Ok(LogisticFit {
        model: LinearModel::from_f64(ModelKind::Logistic, &w, theta[d])?,
        loss_trace: trace,
        grad_norm,
    })
}

/// Closed-form ridge regression on centered data:
/// `(X^T X + lambda I) w = X^T y`, `bias = mean(y) - w . mean(X)`.
/// `lambda = +inf` yields zero weights.
pub fn fit_ridge<T: Scalar>(m: &Matrix<T>, y: &[f64], lambda: f64) -> Result<LinearModel<T>> {
    let (n, d) = m.shape();
    if n < 2 || y.len() != n {
        return Err(Error::invalid(format!(
            "ridge needs at least 2 rows with matching targets ({n} rows, {} targets)",
            y.len()
        )));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid("ridge lambda must be nonnegative"));
    }
    let x_mean = m.column_means();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if lambda.is_infinite() {
        return LinearModel::from_f64(ModelKind::Ridge, &vec![0.0; d], y_mean);
    }
    let xc = DMatrix::from_fn(n, d, |i, j| m.get(i, j).to_f64_lossless() - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let w = if lambda == 0.0 || d <= n {
        let mut gram = xc.tr_mul(&xc);
        if lambda == 0.0 {
            let eig = SymmetricEigen::new(gram.clone());
            let max = eig.eigenvalues.max();
            let min = eig.eigenvalues.min();
            if max <= 0.0 || min <= 1e-12 * max {
                return Err(Error::invalid(
                    "features are rank-deficient; use lambda > 0",
                ));
            }
        }
        for j in 0..d {
            gram[(j, j)] += lambda;
        }
        let rhs = xc.tr_mul(&yc);
        gram.cholesky()
            .ok_or_else(|| Error::Numeric("ridge normal equations are not positive definite".into()))?
            .solve(&rhs)
    } else {
        // n < d: solve the n x n dual system
        let mut kernel = &xc * xc.transpose();
        for i in 0..n {
            kernel[(i, i)] += lambda;
        }
        let alpha = kernel
            .cholesky()
            .ok_or_else(|| Error::Numeric("ridge dual system is not positive definite".into()))?
            .solve(&yc);
        xc.tr_mul(&alpha)
    };
    let w: Vec<f64> = w.iter().copied().collect();
    let bias = y_mean - w.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
    LinearModel::from_f64(ModelKind::Ridge, &w, bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gdv::GroupingStrategy;
    use crate::scalar::cosine;
    use crate::stats::{regression_metrics, rng_from_seed};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> Matrix<f64> {
        let mut rng = rng_from_seed(seed);
        Matrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn schedule_shape() {
        let (total, warm, base) = (100, 10, 1e-3);
        assert!((lr_schedule(0, total, warm, base) - 1e-4).abs() < 1e-18);
        assert_eq!(lr_schedule(warm - 1, total, warm, base), base);
        let peak = (0..total).map(|s| lr_schedule(s, total, warm, base)).fold(0.0, f64::max);
        assert_eq!(peak, base);
        assert!(lr_schedule(total - 1, total, warm, base) < 1e-3 * base);
        for s in warm..total - 1 {
            assert!(lr_schedule(s + 1, total, warm, base) <= lr_schedule(s, total, warm, base));
        }
    }

    #[test]
    fn huber_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(11);
        let x: Vec<Vec<f64>> = (0..50).map(|_| (0..6).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let y: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        for _ in 0..20 {
            let w: Vec<f64> = (0..6).map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
            let b: f64 = rng.random();
            let (_, gw, gb) = huber_objective(&w, b, &x, &y, 0.1);
            let h = 1e-6;
            for j in 0..6 {
                let mut wp = w.clone();
                wp[j] += h;
                let mut wm = w.clone();
                wm[j] -= h;
                let fd = (huber_objective(&wp, b, &x, &y, 0.1).0 - huber_objective(&wm, b, &x, &y, 0.1).0) / (2.0 * h);
                assert!((fd - gw[j]).abs() <= 1e-4 * gw[j].abs().max(1e-3), "{fd} vs {}", gw[j]);
            }
            let fd = (huber_objective(&w, b + h, &x, &y, 0.1).0 - huber_objective(&w, b - h, &x, &y, 0.1).0) / (2.0 * h);
            assert!((fd - gb).abs() <= 1e-4 * gb.abs().max(1e-3));
        }
    }

    fn planted_linear(n: usize, d: usize, seed: u64) -> (Matrix<f64>, Vec<f64>) {
        let x = gaussian(n, d, seed);
        let mut rng = rng_from_seed(seed + 1);
        let w: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let raw: Vec<f64> = x.row_iter().map(|r| crate::scalar::dot(r, &w)).collect();
        let (lo, hi) = raw.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let y = raw.iter().map(|v| (v - lo) / (hi - lo)).collect();
        (x, y)
    }

    #[test]
    fn head_fits_exact_linear_targets() {
        let (x, y) = planted_linear(2400, 16, 3);
        let train: Vec<usize> = (0..2000).collect();
        let val: Vec<usize> = (2000..2400).collect();
        let (tx, vx) = (x.select_rows(&train), x.select_rows(&val));
        let (ty, vy) = (&y[..2000], &y[2000..]);
        let cfg = TrainConfig { base_lr: 1e-2, batch_size: 32, weight_decay: 0.0, ..Default::default() };
        let (model, log) = train_regression_head((&tx, ty), (&vx, vy), &cfg).unwrap();
        let pred = model.predict(&vx).unwrap();
        let m = regression_metrics(&pred, vy).unwrap();
        assert!(m.r2 >= 0.99, "r2 {}", m.r2);
        assert!(!log.epochs.is_empty());
    }

    #[test]
    fn early_stopping_restores_best_epoch() {
        let (x, y) = planted_linear(600, 8, 5);
        let mut rng = rng_from_seed(9);
        // noisy validation targets make validation loss plateau and wobble
        let vy: Vec<f64> = y[500..].iter().map(|v| (v + 0.3 * rng.random::<f64>()).min(1.0)).collect();
        let tx = x.select_rows(&(0..500).collect::<Vec<_>>());
        let vx = x.select_rows(&(500..600).collect::<Vec<_>>());
        let cfg = TrainConfig { base_lr: 5e-2, batch_size: 16, patience: 2, ..Default::default() };
        let (model, log) = train_regression_head((&tx, &y[..500]), (&vx, &vy), &cfg).unwrap();
        let best = log.epochs.iter().min_by(|a, b| a.val_loss.total_cmp(&b.val_loss)).unwrap();
        assert_eq!(best.epoch, log.best_epoch);
        let pred = model.predict(&vx).unwrap();
        let loss = pred.iter().zip(&vy).map(|(p, t)| huber_loss(p - t, 0.1)).sum::<f64>() / vy.len() as f64;
        assert!((loss - best.val_loss).abs() < 1e-9 * best.val_loss.max(1.0));
    }

    #[test]
    fn standardized_training_predicts_in_raw_space() {
        let (x, y) = planted_linear(1200, 4, 8);
        let x = x.map(|v| 50.0 * v + 3.0);
        let tx = x.select_rows(&(0..1000).collect::<Vec<_>>());
        let vx = x.select_rows(&(1000..1200).collect::<Vec<_>>());
        let cfg = TrainConfig { base_lr: 1e-2, batch_size: 32, weight_decay: 0.0, standardize: true, ..Default::default() };
        let (model, _) = train_regression_head((&tx, &y[..1000]), (&vx, &y[1000..]), &cfg).unwrap();
        let m = regression_metrics(&model.predict(&vx).unwrap(), &y[1000..]).unwrap();
        assert!(m.r2 > 0.98, "{}", m.r2);
    }

    #[test]
    fn head_rejects_bad_config() {
        let x = gaussian(10, 2, 0);
        let y = vec![0.5; 10];
        let zero = TrainConfig { max_epochs: 0, patience: 0, ..Default::default() };
        assert!(train_regression_head((&x, &y), (&x, &y), &zero).is_err());
        let out_of_range = vec![1.5; 10];
        assert!(train_regression_head((&x, &out_of_range), (&x, &y), &TrainConfig::default()).is_err());
    }

    #[test]
    fn logistic_one_dimensional_sign() {
        let xs: Vec<f64> = (-50..=50).filter(|&v| v != 0).map(|v| v as f64 / 10.0).collect();
        let m = Matrix::column_vector(&xs);
        let labels = GroupLabels::new(GroupingStrategy::Custom, xs.iter().map(|&x| usize::from(x > 0.0)).collect()).unwrap();
        let fit = fit_logistic(&m, &labels, Some(1e-3)).unwrap();
        assert!(fit.model.weights[0] > 0.0);
        let threshold = -fit.model.bias / fit.model.weights[0];
        assert!(threshold.abs() < 1e-6, "{threshold}");
        assert!(fit.grad_norm < 1e-6);
    }

    #[test]
    fn logistic_recovers_planted_hyperplane() {
        let mut rng = rng_from_seed(17);
        let w: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
        let wn = crate::scalar::norm(&w);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        while rows.len() < 2000 {
            let x: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
            let s = crate::scalar::dot(&x, &w) / wn;
            if s.abs() >= 0.5 {
                labels.push(usize::from(s > 0.0));
                rows.push(x);
            }
        }
        let m = Matrix::from_rows(&rows).unwrap();
        let labels = GroupLabels::new(GroupingStrategy::Custom, labels).unwrap();
        let fit = fit_logistic(&m, &labels, None).unwrap();
        assert!(cosine(&fit.model.weights, &w).unwrap() >= 0.95);
        for pair in fit.loss_trace.windows(2) {
            assert!(pair[1] < pair[0]);
        }
    }

    #[test]
    fn logistic_rejects_degenerate_input() {
        let m = gaussian(6, 2, 1);
        let three = GroupLabels::new(GroupingStrategy::Custom, vec![0, 1, 2, 0, 1, 2]).unwrap();
        assert!(fit_logistic(&m, &three, None).is_err());
        let two = GroupLabels::new(GroupingStrategy::Custom, vec![0, 1, 0, 1, 0, 1]).unwrap();
        assert!(fit_logistic(&m, &two, Some(0.0)).is_err());
    }

    #[test]
    fn ridge_hand_example() {
        let m = Matrix::<f64>::column_vector(&[1.0, 2.0, 3.0]);
        let model = fit_ridge(&m, &[1.0, 2.0, 3.0], 1.0).unwrap();
        assert!((model.weights[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((model.bias - (2.0 - 2.0 / 3.0 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn ridge_limits() {
        let x = gaussian(50, 3, 2);
        let y: Vec<f64> = x.row_iter().map(|r| 2.0 * r[0]).collect();
        let model = fit_ridge(&x, &y, 1e-9).unwrap();
        assert!((model.weights[0] - 2.0).abs() < 1e-6);
        assert!(model.weights[1].abs() < 1e-6 && model.weights[2].abs() < 1e-6);

        let big = fit_ridge(&x, &y, 1e12).unwrap();
        assert!(crate::scalar::norm(&big.weights) < 1e-8);
        let inf = fit_ridge(&x, &y, f64::INFINITY).unwrap();
        assert_eq!(inf.weights, vec![0.0; 3]);
        assert!((inf.bias - crate::stats::mean(&y)).abs() < 1e-15);
    }

    #[test]
    fn ridge_rank_deficient_needs_lambda() {
        let m = Matrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let err = fit_ridge(&m, &y, 0.0).unwrap_err().to_string();
        assert!(err.contains("lambda > 0"), "{err}");
        assert!(fit_ridge(&m, &y, 0.1).is_ok());
        assert!(fit_ridge(&m, &y, -1.0).is_err());
    }

    /// Gaussian elimination with partial pivoting; independent of the nalgebra path.
    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn ridge_zero_lambda_is_least_squares() {
        let x = gaussian(40, 4, 6);
        let mut rng = rng_from_seed(7);
        let y: Vec<f64> = (0..40).map(|_| rng.random()).collect();
        let model = fit_ridge(&x, &y, 0.0).unwrap();
        // normal equations with an explicit intercept column
        let design: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().chain([1.0]).collect()).collect();
        let mut ata = vec![vec![0.0; 5]; 5];
        let mut aty = vec![0.0; 5];
        for (r, &t) in design.iter().zip(&y) {
            for i in 0..5 {
                aty[i] += r[i] * t;
                for j in 0..5 {
                    ata[i][j] += r[i] * r[j];
                }
            }
        }
        let beta = solve_dense(ata, aty);
        for j in 0..4 {
            assert!((model.weights[j] - beta[j]).abs() < 1e-8);
        }
        assert!((model.bias - beta[4]).abs() < 1e-8);
    }

    #[test]
    fn ridge_dual_matches_primal() {
        let x = gaussian(12, 30, 4);
        let y: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let dual = fit_ridge(&x, &y, 0.5).unwrap();
        // primal path forced through the test-local solver
        let means = x.column_means();
        let ym = crate::stats::mean(&y);
        let xc: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().zip(&means).map(|(a, m)| a - m).collect()).collect();
        let mut a = vec![vec![0.0; 30]; 30];
        let mut rhs = vec![0.0; 30];
        for (r, t) in xc.iter().zip(&y) {
            for i in 0..30 {
                rhs[i] += r[i] * (t - ym);
                for j in 0..30 {
                    a[i][j] += r[i] * r[j];
                }
            }
        }
        (0..30).for_each(|i| a[i][i] += 0.5);
        let w = solve_dense(a, rhs);
        for j in 0..30 {
            assert!((dual.weights[j] - w[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn model_json_round_trip() {
        let model = LinearModel::<f32> { kind: ModelKind::Ridge, weights: vec![0.5, -1.25], bias: 0.125 };
        let v: serde_json::Value = serde_json::from_str(&model.to_json()).unwrap();
        assert_eq!(v["kind"], "ridge");
        assert_eq!(v["d"], 2);
        assert_eq!(LinearModel::<f32>::from_json(&model.to_json()).unwrap(), model);
        assert!(LinearModel::<f32>::from_json(r#"{"kind":"ridge","d":3,"bias":0,"weights":[1]}"#).is_err());
    }
}
