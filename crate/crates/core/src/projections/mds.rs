use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ProjectionMethod, ProjectionResult};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmacofConfig {
    pub max_iter: usize,
    /// Stop once the relative stress decrease falls below this.
    pub eps: f64,
}

impl Default for SmacofConfig {
    fn default() -> Self {
        SmacofConfig {
            max_iter: 300,
            eps: 1e-6,
        }
    }
}

fn validate(dist: &Matrix<f64>) -> Result<()> {
    let n = dist.nrows();
    if dist.ncols() != n {
        return Err(Error::invalid(format!("distance matrix is {}x{}, not square", n, dist.ncols())));
    }
    let scale = dist.as_slice().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    for i in 0..n {
        if dist.get(i, i) != 0.0 {
            return Err(Error::invalid(format!("distance matrix diagonal ({i},{i}) is nonzero")));
        }
        for j in i + 1..n {
            let (a, b) = (dist.get(i, j), dist.get(j, i));
            if !a.is_finite() || a < 0.0 || b < 0.0 {
                return Err(Error::invalid(format!("distance ({i},{j}) is negative or non-finite")));
            }
            if (a - b).abs() > 1e-9 * scale.max(1.0) {
                return Err(Error::invalid(format!("distance matrix is asymmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Raw stress `sum_{i<j} (dist_ij - |y_i - y_j|)^2`.
pub fn raw_stress(dist: &Matrix<f64>, coords: &[[f64; 2]]) -> f64 {
    let n = coords.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    let r = dist.get(i, j) - euclid(coords[i], coords[j]);
                    r * r
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

#[inline]
fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Torgerson scaling: top two eigenvectors of the double-centered squared distances.
fn classical_scaling(dist: &Matrix<f64>) -> Vec<[f64; 2]> {
    let n = dist.nrows();
    let sq = DMatrix::from_fn(n, n, |i, j| dist.get(i, j).powi(2));
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).mean()).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut coords = vec![[0.0; 2]; n];
    for (c, &idx) in order.iter().take(2).enumerate() {
        let scale = eig.eigenvalues[idx].max(0.0).sqrt();
        let v = eig.eigenvectors.column(idx);
        // deterministic orientation: largest-magnitude entry positive
        let pivot = (0..n).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[i][c] = sign * scale * v[i];
        }
    }
    coords
}

/// Metric MDS by stress majorization, initialized from classical scaling.
///
/// The per-iteration stress is recorded in `trace`; each Guttman transform
/// never increases it.
pub fn mds_smacof<T: Scalar>(dist: &Matrix<T>, config: &SmacofConfig) -> Result<ProjectionResult<T>> {
    let dist: Matrix<f64> = dist.cast();
    validate(&dist)?;
    let n = dist.nrows();
    let mut coords = if n == 0 { Vec::new() } else { classical_scaling(&dist) };
    let mut stress = raw_stress(&dist, &coords);
    let mut trace = vec![stress];
    let mut iterations = 0;
    while iterations < config.max_iter && stress > 0.0 {
        coords = guttman_transform(&dist, &coords);
        let next = raw_stress(&dist, &coords);
        trace.push(next);
        iterations += 1;
        let decrease = (stress - next) / stress;
        stress = next;
        if decrease < config.eps {
            break;
        }
    }
    let coords = Matrix::from_fn(n, 2, |i, c| T::of(coords[i][c]));
    Ok(ProjectionResult {
        method: ProjectionMethod::Mds,
        coords,
        diagnostics: BTreeMap::from([
            ("final_stress".to_string(), stress),
            ("iterations".to_string(), iterations as f64),
        ]),
        trace,
    })
}

/// `X <- B(X) X / n` for unit weights.
fn guttman_transform(dist: &Matrix<f64>, x: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = x.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = [0.0; 2];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let current = euclid(x[i], x[j]);
                if current > 0.0 {
                    let ratio = dist.get(i, j) / current;
                    acc[0] += ratio * (x[i][0] - x[j][0]);
                    acc[1] += ratio * (x[i][1] - x[j][1]);
                }
            }
            [acc[0] / n as f64, acc[1] / n as f64]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::pairwise_euclidean;
    use crate::stats::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn embedded_distances(r: &ProjectionResult<f64>) -> Matrix<f64> {
        pairwise_euclidean(&r.coords)
    }

    #[test]
    fn equilateral_triangle() {
        let d = Matrix::from_rows(&[[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]).unwrap();
        let r = mds_smacof(&d, &SmacofConfig::default()).unwrap();
        let e = embedded_distances(&r);
        for i in 0..3 {
            for j in 0..3 {
                assert!((e.get(i, j) - d.get(i, j)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn planar_points_self_embed() {
        let mut rng = rng_from_seed(8);
        let pts = Matrix::<f64>::from_fn(30, 2, |_, _| rng.sample(StandardNormal));
        let d = pairwise_euclidean(&pts);
        let r = mds_smacof(&d, &SmacofConfig::default()).unwrap();
        let total: f64 = d.as_slice().iter().map(|x| x * x).sum::<f64>() / 2.0;
        assert!(r.diagnostics["final_stress"] < 1e-6 * total);
    }

    #[test]
    fn tetrahedron_has_residual_stress() {
        let mut d = Matrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        let r = mds_smacof(&d, &SmacofConfig::default()).unwrap();
        assert!(r.diagnostics["final_stress"] > 1e-3);
        d.set(0, 1, -1.0);
        d.set(1, 0, -1.0);
        assert!(mds_smacof(&d, &SmacofConfig::default()).is_err());
    }

    #[test]
    fn rejects_asymmetry() {
        let d = Matrix::from_rows(&[[0.0, 1.0], [2.0, 0.0]]).unwrap();
        assert!(mds_smacof(&d, &SmacofConfig::default()).is_err());
        let d = Matrix::from_rows(&[[1.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(mds_smacof(&d, &SmacofConfig::default()).is_err());
    }

    #[test]
    fn stress_never_increases() {
        let mut rng = rng_from_seed(2);
        let pts = Matrix::<f64>::from_fn(40, 6, |_, _| rng.sample(StandardNormal));
        let d = pairwise_euclidean(&pts);
        let r = mds_smacof(&d, &SmacofConfig { max_iter: 500, eps: 0.0 }).unwrap();
        assert!(r.trace.len() > 10);
        for w in r.trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
        let again = mds_smacof(&d, &SmacofConfig { max_iter: 500, eps: 0.0 }).unwrap();
        assert_eq!(r.coords, again.coords);
    }

    #[test]
    fn identical_points_collapse() {
        let d = Matrix::<f64>::zeros(5, 5);
        let r = mds_smacof(&d, &SmacofConfig::default()).unwrap();
        assert!(r.coords.as_slice().iter().all(|&x| x == 0.0));
    }
}
