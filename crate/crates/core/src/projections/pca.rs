use std::collections::BTreeMap;

use super::{ProjectionMethod, ProjectionResult};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Principal axes of a centered data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Vec<T>,
    /// `k x d`, orthonormal rows in descending eigenvalue order.
    pub components: Matrix<T>,
    /// Sample-covariance eigenvalues (divides by `n - 1`), descending.
    pub eigenvalues: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

impl<T: Scalar> PcaModel<T> {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn d(&self) -> usize {
        self.components.ncols()
    }

    pub fn component(&self, i: usize) -> &[T] {
        self.components.row(i)
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&e| if self.total_variance > 0.0 { e / self.total_variance } else { 0.0 })
            .collect()
    }
}

/// Top-`k` principal components via SVD of the centered data.
///
/// Each component is oriented so its largest-magnitude entry is positive
/// (first such entry on ties).
pub fn pca_fit<T: Scalar>(m: &Matrix<T>, k: usize) -> Result<PcaModel<T>> {
    let (n, d) = m.shape();
    if n < 2 || k == 0 || k > (n - 1).min(d) {
        return Err(Error::invalid(format!(
            "pca: k = {k} must be in 1..=min(n-1, d) = {} for a {n}x{d} matrix",
            n.saturating_sub(1).min(d)
        )));
    }
    let mean = m.column_means();
    let mut centered = m.to_dmatrix();
    for (j, mu) in mean.iter().enumerate() {
        centered.column_mut(j).add_scalar_mut(-mu);
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

    let denom = (n - 1) as f64;
    let total_variance = s.iter().map(|x| x * x / denom).sum();
    let mut components = Matrix::zeros(k, d);
    let mut eigenvalues = Vec::with_capacity(k);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let v: Vec<f64> = v_t.row(idx).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (j, x)| if x.abs() > v[best].abs() { j } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (j, x) in v.iter().enumerate() {
            components.set(row, j, T::of(sign * x));
        }
        eigenvalues.push(s[idx] * s[idx] / denom);
    }
    Ok(PcaModel {
        mean: mean.into_iter().map(T::of).collect(),
        components,
        eigenvalues,
        total_variance,
    })
}

/// Scores of `m` on the first `k` components: `(m - mean) * components^T`.
pub fn pca_project<T: Scalar>(model: &PcaModel<T>, m: &Matrix<T>, k: usize) -> Result<ProjectionResult<T>> {
    if k == 0 || k > model.k() {
        return Err(Error::invalid(format!("pca_project: k = {k} exceeds model rank {}", model.k())));
    }
    if m.ncols() != model.d() {
        return Err(Error::invalid(format!(
            "pca_project: data has {} columns, model expects {}",
            m.ncols(),
            model.d()
        )));
    }
    let mean: Vec<f64> = model.mean.iter().map(|x| x.to_f64_lossless()).collect();
    let coords = Matrix::from_fn(m.nrows(), k, |i, c| {
        let comp = model.component(c);
        let s: f64 = m
            .row(i)
            .iter()
            .zip(&mean)
            .zip(comp)
            .map(|((&x, &mu), &w)| (x.to_f64_lossless() - mu) * w.to_f64_lossless())
            .sum();
        T::of(s)
    });
    let explained: f64 = model.explained_variance_ratio().iter().take(k).sum();
    Ok(ProjectionResult {
        method: ProjectionMethod::Pca,
        coords,
        diagnostics: BTreeMap::from([("explained_variance".to_string(), explained)]),
        trace: Vec::new(),
    })
}
