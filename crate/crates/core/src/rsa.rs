//! Representational similarity analysis: Euclidean dissimilarity matrices
//! over samples and Pearson correlations between them.

use rayon::prelude::*;

use crate::distance::{condensed_euclidean, condensed_len};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::stats::{pearson, Correlation};

/// Upper triangle (row-major, `i < j`) of a sample-by-sample distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Rdm {
    pub n: usize,
    pub values: Vec<f64>,
    pub tag: String,
}

impl Rdm {
    /// Entry `(i, j)`; the diagonal is zero.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.values[crate::distance::condensed_index(self.n, i, j)],
            std::cmp::Ordering::Greater => self.values[crate::distance::condensed_index(self.n, j, i)],
        }
    }
}

/// Euclidean distances between rows.
pub fn rdm_from_matrix<T: Scalar>(m: &Matrix<T>, tag: impl Into<String>) -> Result<Rdm> {
    if m.nrows() < 2 {
        return Err(Error::invalid("an RDM needs at least 2 samples"));
    }
    let values = condensed_euclidean(m);
    debug_assert_eq!(values.len(), condensed_len(m.nrows()));
    Ok(Rdm {
        n: m.nrows(),
        values,
        tag: tag.into(),
    })
}

/// `|p_i - p_j|`, computed through the same path as an `n x 1` matrix.
pub fn rdm_from_scalars(p: &[f64], tag: impl Into<String>) -> Result<Rdm> {
    rdm_from_matrix(&Matrix::column_vector(p), tag)
}

/// Pearson correlation of two RDMs' upper triangles; an all-zero RDM gives
/// `0` flagged degenerate.
pub fn rsa_correlation(a: &Rdm, b: &Rdm) -> Result<Correlation> {
    if a.n != b.n {
        return Err(Error::invalid(format!(
            "RDMs cover different sample counts ({} vs {})",
            a.n, b.n
        )));
    }
    pearson(&a.values, &b.values)
}

/// Representation compared in a grid: a full matrix or one score per sample.
#[derive(Debug, Clone, Copy)]
pub enum SpaceData<'a, T> {
    Matrix(&'a Matrix<T>),
    Scalars(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub struct Space<'a, T> {
    pub tag: &'a str,
    /// Sample ids in row order; must agree across all spaces.
    pub ids: &'a [String],
    pub data: SpaceData<'a, T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsaGrid {
    pub tags: Vec<String>,
    /// Symmetric, unit diagonal.
    pub values: Matrix<f64>,
    /// `degenerate[i][j]` marks pairs involving a constant RDM.
    pub degenerate: Vec<Vec<bool>>,
}

/// Pairwise RDM correlations among `spaces`.
pub fn rsa_grid<T: Scalar>(spaces: &[Space<'_, T>]) -> Result<RsaGrid> {
    let first = spaces.first().ok_or_else(|| Error::invalid("RSA grid needs at least one space"))?;
    for space in spaces {
        if space.ids != first.ids {
            return Err(Error::invalid(format!(
                "space {} lists samples in a different order than {}",
                space.tag, first.tag
            )));
        }
        let rows = match space.data {
            SpaceData::Matrix(m) => m.nrows(),
            SpaceData::Scalars(p) => p.len(),
        };
        if rows != first.ids.len() {
            return Err(Error::invalid(format!(
                "space {} has {rows} rows for {} ids",
                space.tag,
                first.ids.len()
            )));
        }
    }
    let rdms = spaces
        .par_iter()
        .map(|s| match s.data {
            SpaceData::Matrix(m) => rdm_from_matrix(m, s.tag),
            SpaceData::Scalars(p) => rdm_from_scalars(p, s.tag),
        })
        .collect::<Result<Vec<_>>>()?;
    let k = rdms.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let correlations = pairs
        .par_iter()
        .map(|&(i, j)| rsa_correlation(&rdms[i], &rdms[j]))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Matrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.0 });
    let mut degenerate = vec![vec![false; k]; k];
    for (&(i, j), c) in pairs.iter().zip(&correlations) {
        values.set(i, j, c.r);
        values.set(j, i, c.r);
        degenerate[i][j] = c.degenerate;
        degenerate[j][i] = c.degenerate;
    }
    Ok(RsaGrid {
        tags: rdms.into_iter().map(|r| r.tag).collect(),
        values,
        degenerate,
    })
}
