//! Generalized Discrimination Value and its label-permutation test.
//!
//! For `L` labeled classes in `D` dimensions,
//!
//! ```text
//! gdv = 1/sqrt(D) * [ mean_l intra(C_l) - mean_{l<m} inter(C_l, C_m) ]
//! ```
//!
//! where `intra` averages Euclidean distances over unordered pairs inside a
//! class and `inter` over all cross pairs. Negative values mean the classes
//! are tighter than their separation; 0 means no structure.

use std::borrow::Cow;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{condensed_euclidean, condensed_len};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{squared_distance, Scalar};
use crate::stats::{derive_seed, shuffled_labels, zscore_columns};
use crate::store::{ActivationMatrix, Component};

/// Largest sample count for which the permutation test caches all pair distances.
const PAIR_CACHE_LIMIT: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingStrategy {
    BinaryMedian,
    TrendTerciles,
    QuintileBins,
    Custom,
}

impl GroupingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupingStrategy::BinaryMedian => "binary_median",
            GroupingStrategy::TrendTerciles => "trend_terciles",
            GroupingStrategy::QuintileBins => "quintile_bins",
            GroupingStrategy::Custom => "custom",
        }
    }

    /// Labels `ci` with this strategy. `Custom` has no rule of its own.
    pub fn label(self, ci: &[f64]) -> Result<GroupLabels> {
        match self {
            GroupingStrategy::BinaryMedian => binary_median_labels(ci),
            GroupingStrategy::TrendTerciles => quantile_labels(ci, 3),
            GroupingStrategy::QuintileBins => quantile_labels(ci, 5),
            GroupingStrategy::Custom => Err(Error::invalid(
                "custom grouping needs explicit labels",
            )),
        }
    }
}

impl fmt::Display for GroupingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Discrete class labels `0..n_classes`, every class nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLabels {
    pub strategy: GroupingStrategy,
    labels: Vec<usize>,
    n_classes: usize,
}

impl GroupLabels {
    pub fn new(strategy: GroupingStrategy, labels: Vec<usize>) -> Result<Self> {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        if n_classes < 2 {
            return Err(Error::invalid("grouping needs at least 2 classes"));
        }
        let mut counts = vec![0usize; n_classes];
        for &l in &labels {
            counts[l] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("class {empty} is empty")));
        }
        Ok(GroupLabels {
            strategy,
            labels,
            n_classes,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Labels restricted to `rows`; fails if a class becomes empty.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        GroupLabels::new(self.strategy, rows.iter().map(|&i| self.labels[i]).collect())
    }

    fn with_labels(&self, labels: Vec<usize>) -> Self {
        GroupLabels {
            strategy: self.strategy,
            labels,
            n_classes: self.n_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdvReport {
    pub gdv: f64,
    pub per_class_intra: Vec<f64>,
    /// Average of the mean inter-class distances over all class pairs.
    pub mean_inter: f64,
    /// Dimensionality used for the `1/sqrt(D)` factor.
    pub dim: usize,
    pub n_per_class: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed: f64,
    pub null_values: Vec<f64>,
    /// `(1 + #{null <= observed}) / (1 + n_perm)`.
    pub p_value: f64,
}

/// Label 1 iff the score is strictly above the median; ties go to class 0.
pub fn binary_median_labels(ci: &[f64]) -> Result<GroupLabels> {
    if ci.len() < 2 {
        return Err(Error::invalid("median split needs at least 2 samples"));
    }
    let mut sorted = ci.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let labels: Vec<usize> = ci.iter().map(|&c| usize::from(c > median)).collect();
    GroupLabels::new(GroupingStrategy::BinaryMedian, labels)
        .map_err(|_| Error::invalid("median split leaves one class empty (scores are constant at the median)"))
}

/// `q` equal-frequency classes by rank (ties broken by sample order); class
/// sizes differ by at most one and the lowest classes take the extra samples.
pub fn quantile_labels(ci: &[f64], q: usize) -> Result<GroupLabels> {
    let n = ci.len();
    if q < 2 || n < q {
        return Err(Error::invalid(format!(
            "cannot form {q} quantile classes from {n} samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ci[a].total_cmp(&ci[b]).then(a.cmp(&b)));
    let distinct = 1 + order.windows(2).filter(|w| ci[w[0]] != ci[w[1]]).count();
    if distinct < q {
        return Err(Error::invalid(format!(
            "only {distinct} distinct scores; cannot form {q} classes"
        )));
    }
    let mut labels = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * q / n;
    }
    let strategy = match q {
        3 => GroupingStrategy::TrendTerciles,
        5 => GroupingStrategy::QuintileBins,
        _ => GroupingStrategy::Custom,
    };
    GroupLabels::new(strategy, labels)
}

fn check_points<T: Scalar>(points: &Matrix<T>, labels: &GroupLabels) -> Result<()> {
    if points.nrows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} points but {} labels",
            points.nrows(),
            labels.len()
        )));
    }
    if points.ncols() == 0 {
        return Err(Error::invalid("points have zero dimensions"));
    }
    Ok(())
}

fn sum_within<T: Scalar>(block: &Matrix<T>) -> f64 {
    (0..block.nrows())
        .into_par_iter()
        .map(|i| {
            (i + 1..block.nrows())
                .map(|j| squared_distance(block.row(i), block.row(j)).sqrt())
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

fn sum_between<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> f64 {
    (0..a.nrows())
        .into_par_iter()
        .map(|i| {
            b.row_iter()
                .map(|r| squared_distance(a.row(i), r).sqrt())
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Assembles the report from per-class-pair distance sums.
/// `sums[l][m]` (l <= m) is the distance total over pairs drawn from classes l and m.
fn assemble(sums: &[Vec<f64>], sizes: &[usize], dim: usize) -> GdvReport {
    let l_count = sizes.len();
    let per_class_intra: Vec<f64> = (0..l_count)
        .map(|l| {
            let pairs = sizes[l] * sizes[l].saturating_sub(1) / 2;
            if pairs == 0 {
                0.0
            } else {
                sums[l][l] / pairs as f64
            }
        })
        .collect();
    let mut inter_total = 0.0;
    for l in 0..l_count {
        for m in l + 1..l_count {
            inter_total += sums[l][m] / (sizes[l] * sizes[m]) as f64;
        }
    }
    let n_pairs = (l_count * (l_count - 1) / 2) as f64;
    let mean_intra = per_class_intra.iter().sum::<f64>() / l_count as f64;
    let mean_inter = inter_total / n_pairs;
    GdvReport {
        gdv: (mean_intra - mean_inter) / (dim as f64).sqrt(),
        per_class_intra,
        mean_inter,
        dim,
        n_per_class: sizes.to_vec(),
    }
}

/// Computes the GDV blockwise (class against class) without materializing all
/// pair distances. With `zscore` set the columns are standardized first.
pub fn gdv<T: Scalar>(points: &Matrix<T>, labels: &GroupLabels, zscore: bool) -> Result<GdvReport> {
    check_points(points, labels)?;
    let points: Cow<Matrix<T>> = if zscore {
        Cow::Owned(zscore_columns(points))
    } else {
        Cow::Borrowed(points)
    };
    let l_count = labels.n_classes();
    let mut members = vec![Vec::new(); l_count];
    for (i, &l) in labels.labels().iter().enumerate() {
        members[l].push(i);
    }
    let blocks: Vec<Matrix<T>> = members.iter().map(|m| points.select_rows(m)).collect();
    let mut sums = vec![vec![0.0; l_count]; l_count];
    for l in 0..l_count {
        sums[l][l] = sum_within(&blocks[l]);
        for m in l + 1..l_count {
            sums[l][m] = sum_between(&blocks[l], &blocks[m]);
        }
    }
    Ok(assemble(&sums, &labels.class_sizes(), points.ncols()))
}

/// GDV over a precomputed condensed distance vector.
fn gdv_condensed(n: usize, condensed: &[f64], labels: &[usize], sizes: &[usize], dim: usize) -> GdvReport {
    let l_count = sizes.len();
    let mut sums = vec![vec![0.0; l_count]; l_count];
    let mut k = 0;
    for i in 0..n {
        let li = labels[i];
        for &lj in &labels[i + 1..n] {
            let (a, b) = if li <= lj { (li, lj) } else { (lj, li) };
            sums[a][b] += condensed[k];
            k += 1;
        }
    }
    assemble(&sums, sizes, dim)
}

/// One-sided label-permutation test: trial `i` shuffles the labels with seed
/// `derive_seed(seed, i)`, keeping class sizes fixed. Lower GDV is better
/// clustering, so the p-value counts null values at or below the observed one.
pub fn permutation_test<T: Scalar>(
    points: &Matrix<T>,
    labels: &GroupLabels,
    n_perm: usize,
    seed: u64,
) -> Result<PermutationResult> {
    if n_perm == 0 {
        return Err(Error::invalid("n_perm must be at least 1"));
    }
    check_points(points, labels)?;
    let n = points.nrows();
    let sizes = labels.class_sizes();
    let dim = points.ncols();

    let (observed, null_values) = if n <= PAIR_CACHE_LIMIT {
        let condensed = condensed_euclidean(points);
        debug_assert_eq!(condensed.len(), condensed_len(n));
        let observed = gdv_condensed(n, &condensed, labels.labels(), &sizes, dim).gdv;
        let nulls = (0..n_perm as u64)
            .into_par_iter()
            .map(|i| {
                let shuffled = shuffled_labels(labels.labels(), derive_seed(seed, i));
                gdv_condensed(n, &condensed, &shuffled, &sizes, dim).gdv
            })
            .collect();
        (observed, nulls)
    } else {
        let observed = gdv(points, labels, false)?.gdv;
        let nulls = (0..n_perm as u64)
            .into_par_iter()
            .map(|i| {
                let shuffled = labels.with_labels(shuffled_labels(labels.labels(), derive_seed(seed, i)));
                gdv(points, &shuffled, false).map(|r| r.gdv)
            })
            .collect::<Result<Vec<f64>>>()?;
        (observed, nulls)
    };
    let at_or_below = null_values.iter().filter(|&&v| v <= observed).count();
    Ok(PermutationResult {
        observed,
        p_value: (1 + at_or_below) as f64 / (1 + n_perm) as f64,
        null_values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGdv {
    pub layer_id: String,
    pub component: Component,
    pub report: GdvReport,
}

/// GDV of every layer under one labeling, in store order.
pub fn layerwise_gdv(layers: &[ActivationMatrix], labels: &GroupLabels, zscore: bool) -> Result<Vec<LayerGdv>> {
    if let Some(bad) = layers.iter().find(|l| l.n() != labels.len()) {
        return Err(Error::invalid(format!(
            "layer {} has {} rows, expected {}",
            bad.layer_id,
            bad.n(),
            labels.len()
        )));
    }
    layers
        .iter()
        .map(|l| {
            Ok(LayerGdv {
                layer_id: l.layer_id.clone(),
                component: l.component,
                report: gdv(&l.data, labels, zscore)?,
            })
        })
        .collect()
}
