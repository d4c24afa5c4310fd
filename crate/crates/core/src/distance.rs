//! Euclidean distances between sample rows.
//!
//! Condensed vectors list the upper triangle row by row: `(0,1), (0,2), ...,
//! (0,n-1), (1,2), ...`. RDMs and the GDV permutation cache share this order.

use rayon::prelude::*;

use crate::matrix::Matrix;
use crate::scalar::{squared_distance, Scalar};

/// Length of the condensed upper triangle for `n` samples.
#[inline]
pub fn condensed_len(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Position of pair `(i, j)`, `i < j`, in the condensed vector.
#[inline]
pub fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Condensed Euclidean distances between all row pairs.
pub fn condensed_euclidean<T: Scalar>(m: &Matrix<T>) -> Vec<f64> {
    let n = m.nrows();
    let chunks: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| squared_distance(m.row(i), m.row(j)).sqrt())
                .collect()
        })
        .collect();
    chunks.concat()
}

/// Full symmetric `n x n` Euclidean distance matrix with zero diagonal.
pub fn pairwise_euclidean<T: Scalar>(m: &Matrix<T>) -> Matrix<f64> {
    let n = m.nrows();
    let condensed = condensed_euclidean(m);
    square_from_condensed(n, &condensed)
}

pub fn square_from_condensed(n: usize, condensed: &[f64]) -> Matrix<f64> {
    let mut out = Matrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            out.set(i, j, condensed[k]);
            out.set(j, i, condensed[k]);
            k += 1;
        }
    }
    out
}
