//! Two-dimensional embeddings of activation matrices.

mod mds;
mod pca;
mod tsne;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use mds::{mds_smacof, raw_stress, SmacofConfig};
pub use pca::{pca_fit, pca_project, PcaModel};
pub use tsne::{conditional_probabilities, tsne, TsneConfig};

use crate::distance::pairwise_euclidean;
use crate::error::Result;
use crate::gdv::{gdv, GdvReport, GroupLabels};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[non_exhaustive]
pub enum ProjectionMethod {
    Pca,
    Mds,
    Tsne,
}

impl ProjectionMethod {
    pub const ALL: [ProjectionMethod; 3] = [ProjectionMethod::Pca, ProjectionMethod::Mds, ProjectionMethod::Tsne];

    pub fn as_str(self) -> &'static str {
        match self {
            ProjectionMethod::Pca => "pca",
            ProjectionMethod::Mds => "mds",
            ProjectionMethod::Tsne => "tsne",
        }
    }
}

impl fmt::Display for ProjectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult<T> {
    pub method: ProjectionMethod,
    /// `n x 2` (or `n x k` for PCA) coordinates, row-aligned with the input.
    pub coords: Matrix<T>,
    /// `explained_variance`, `final_stress` or `final_kl`, depending on the method.
    pub diagnostics: BTreeMap<String, f64>,
    /// Objective per iteration (MDS stress, t-SNE KL); empty for PCA.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionParams {
    pub smacof: SmacofConfig,
    pub tsne: TsneConfig,
}

/// Projects `m` to two dimensions. MDS runs on Euclidean distances of the rows.
pub fn project<T: Scalar>(m: &Matrix<T>, method: ProjectionMethod, params: &ProjectionParams) -> Result<ProjectionResult<T>> {
    match method {
        ProjectionMethod::Pca => {
            let k = 2.min(m.nrows().saturating_sub(1)).min(m.ncols());
            let model = pca_fit(m, k)?;
            let mut result = pca_project(&model, m, k)?;
            if k < 2 {
                result.coords = Matrix::from_fn(m.nrows(), 2, |i, j| {
                    if j < k {
                        result.coords.get(i, j)
                    } else {
                        T::zero()
                    }
                });
            }
            Ok(result)
        }
        ProjectionMethod::Mds => {
            let result = mds_smacof(&pairwise_euclidean(m), &params.smacof)?;
            Ok(ProjectionResult {
                method: result.method,
                coords: result.coords.cast(),
                diagnostics: result.diagnostics,
                trace: result.trace,
            })
        }
        ProjectionMethod::Tsne => tsne(m, &params.tsne),
    }
}

/// Projects, then scores the 2-D coordinates with the GDV (`D = 2`).
pub fn project_then_gdv<T: Scalar>(
    m: &Matrix<T>,
    labels: &GroupLabels,
    method: ProjectionMethod,
    params: &ProjectionParams,
) -> Result<(ProjectionResult<T>, GdvReport)> {
    let projection = project(m, method, params)?;
    let report = gdv(&projection.coords, labels, false)?;
    Ok((projection, report))
}
