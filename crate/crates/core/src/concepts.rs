//! Concept directions: six ways to turn a layer's activations and per-sample
//! scores into a single unit vector, plus projection and evaluation helpers.
//!
//! Every returned direction is unit-norm and oriented so that projections of
//! the fitting rows correlate nonnegatively with the scores.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gdv::binary_median_labels;
use crate::matrix::Matrix;
use crate::probe::{fit_logistic, fit_ridge};
use crate::projections::pca_fit;
use crate::sae::{atom_ci_correlations, sae_train, AtomActivations, SaeConfig, SaeModel};
use crate::scalar::{dot, norm, Scalar};
use crate::stats::pearson;
use crate::store::format::{read_matrix, write_matrix};
use crate::store::ActivationMatrix;

/// Fraction of samples in each extreme group for the difference of means.
pub const DIFF_MEANS_FRACTION: f64 = 0.2;
/// Atoms taken from each end of the correlation ranking for the SAE composite.
pub const SAE_ATOMS_PER_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptMethod {
    DiffMeans,
    PcaFirst,
    PcaBest,
    ProbeClf,
    ProbeReg,
    SaeComposed,
}

impl ConceptMethod {
    pub const ALL: [ConceptMethod; 6] = [
        ConceptMethod::DiffMeans,
        ConceptMethod::PcaFirst,
        ConceptMethod::PcaBest,
        ConceptMethod::ProbeClf,
        ConceptMethod::ProbeReg,
        ConceptMethod::SaeComposed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConceptMethod::DiffMeans => "diff_means",
            ConceptMethod::PcaFirst => "pca_first",
            ConceptMethod::PcaBest => "pca_best",
            ConceptMethod::ProbeClf => "probe_clf",
            ConceptMethod::ProbeReg => "probe_reg",
            ConceptMethod::SaeComposed => "sae_composed",
        }
    }
}

impl fmt::Display for ConceptMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptVector<T> {
    pub method: ConceptMethod,
    pub layer_id: String,
    /// Unit-norm direction.
    pub direction: Vec<T>,
    /// False only when the fitting scores were constant and no orientation exists.
    pub sign_aligned: bool,
    /// Method-specific diagnostics, always including `train_r`.
    pub fit_stats: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct ConceptSidecar {
    method: ConceptMethod,
    layer_id: String,
    d: usize,
    sign_aligned: bool,
    fit_stats: BTreeMap<String, f64>,
}

impl<T: Scalar> ConceptVector<T> {
    /// Normalizes `raw` and orients it positively against `ci` on `m`.
    fn aligned(method: ConceptMethod, raw: Vec<f64>, m: &Matrix<T>, ci: &[f64], mut fit_stats: BTreeMap<String, f64>) -> Result<Self> {
        let length = norm(&raw);
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Numeric(format!("{method} produced a zero or non-finite direction")));
        }
        let mut unit: Vec<f64> = raw.iter().map(|x| x / length).collect();
        let proj: Vec<f64> = m.row_iter().map(|r| dot_mixed(r, &unit)).collect();
        let corr = pearson(&proj, ci)?;
        let mut r = corr.r;
        if r < 0.0 {
            unit.iter_mut().for_each(|x| *x = -*x);
            r = -r;
        }
        fit_stats.insert("train_r".into(), r);
        Ok(ConceptVector {
            method,
            layer_id: String::new(),
            direction: unit.into_iter().map(T::of).collect(),
            sign_aligned: !corr.degenerate,
            fit_stats,
        })
    }

    pub fn with_layer(mut self, layer_id: impl Into<String>) -> Self {
        self.layer_id = layer_id.into();
        self
    }

    pub fn d(&self) -> usize {
        self.direction.len()
    }

    /// Writes `<path>` (JSON metadata) and `<path with .actv>` (`1 x d` payload).
    pub fn save(&self, json_path: &Path) -> Result<()> {
        let sidecar = ConceptSidecar {
            method: self.method,
            layer_id: self.layer_id.clone(),
            d: self.d(),
            sign_aligned: self.sign_aligned,
            fit_stats: self.fit_stats.clone(),
        };
        let text = serde_json::to_string_pretty(&sidecar).expect("concept metadata serializes") + "\n";
        fs::write(json_path, text).map_err(|e| Error::io(json_path, e))?;
        let payload = Matrix::from_fn(1, self.d(), |_, j| self.direction[j].to_f32().unwrap_or(f32::NAN));
        write_matrix(&payload_path(json_path), &payload)
    }

    pub fn load(json_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let sidecar: ConceptSidecar = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: json_path.to_path_buf(),
            source,
        })?;
        let payload_file = payload_path(json_path);
        let payload = read_matrix(&payload_file)?;
        if payload.shape() != (1, sidecar.d) {
            return Err(Error::format(
                &payload_file,
                format!("expected a 1x{} direction, found {:?}", sidecar.d, payload.shape()),
            ));
        }
        Ok(ConceptVector {
            method: sidecar.method,
            layer_id: sidecar.layer_id,
            direction: payload.into_vec().into_iter().map(|x| T::of(f64::from(x))).collect(),
            sign_aligned: sidecar.sign_aligned,
            fit_stats: sidecar.fit_stats,
        })
    }
}

fn payload_path(json_path: &Path) -> PathBuf {
    json_path.with_extension(crate::store::ACTIVATION_EXTENSION)
}

#[inline]
fn dot_mixed<T: Scalar>(row: &[T], direction: &[f64]) -> f64 {
    row.iter().zip(direction).map(|(x, w)| x.to_f64_lossless() * w).sum()
}

fn check_scores<T: Scalar>(m: &Matrix<T>, ci: &[f64], min_rows: usize) -> Result<()> {
    if m.nrows() != ci.len() {
        return Err(Error::invalid(format!("{} rows but {} scores", m.nrows(), ci.len())));
    }
    if m.nrows() < min_rows {
        return Err(Error::invalid(format!(
            "need at least {min_rows} samples, got {}",
            m.nrows()
        )));
    }
    if ci.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    Ok(())
}

/// Mean of the top 20% (by score rank) minus mean of the bottom 20%. Rank
/// ties at the boundary go to the earlier sample.
pub fn cv_diff_means<T: Scalar>(m: &Matrix<T>, ci: &[f64]) -> Result<ConceptVector<T>> {
    check_scores(m, ci, 10)?;
    let n = m.nrows();
    let k = (DIFF_MEANS_FRACTION * n as f64).floor() as usize;
    let mut ascending: Vec<usize> = (0..n).collect();
    ascending.sort_by(|&a, &b| ci[a].total_cmp(&ci[b]).then(a.cmp(&b)));
    let mut descending: Vec<usize> = (0..n).collect();
    descending.sort_by(|&a, &b| ci[b].total_cmp(&ci[a]).then(a.cmp(&b)));
    let group_mean = |rows: &[usize]| m.select_rows(rows).column_means();
    let top = group_mean(&descending[..k]);
    let bottom = group_mean(&ascending[..k]);
    let raw: Vec<f64> = top.iter().zip(&bottom).map(|(a, b)| a - b).collect();
    if raw.iter().all(|&x| x == 0.0) {
        return Err(Error::invalid("top and bottom groups have identical means"));
    }
    let stats = BTreeMap::from([("group_size".to_string(), k as f64), ("raw_norm".to_string(), norm(&raw))]);
    ConceptVector::aligned(ConceptMethod::DiffMeans, raw, m, ci, stats)
}

/// Leading principal axis.
pub fn cv_pca_first<T: Scalar>(m: &Matrix<T>, ci: &[f64]) -> Result<ConceptVector<T>> {
    check_scores(m, ci, 2)?;
    let model = pca_fit(m, 1)?;
    if model.total_variance <= 0.0 {
        return Err(Error::invalid("data has zero variance; no principal axis"));
    }
    let raw: Vec<f64> = model.component(0).iter().map(|x| x.to_f64_lossless()).collect();
    let stats = BTreeMap::from([("explained_variance".to_string(), model.explained_variance_ratio()[0])]);
    ConceptVector::aligned(ConceptMethod::PcaFirst, raw, m, ci, stats)
}

/// Among the first `min(max_components, d, n - 1)` principal axes, the one
/// whose projection correlates most strongly (in absolute value) with the
/// scores; the lowest index wins ties.
pub fn cv_pca_best<T: Scalar>(m: &Matrix<T>, ci: &[f64], max_components: usize) -> Result<ConceptVector<T>> {
    check_scores(m, ci, 3)?;
    let k = max_components.min(m.ncols()).min(m.nrows() - 1);
    if k == 0 {
        return Err(Error::invalid("max_components must be at least 1"));
    }
    let model = pca_fit(m, k)?;
    if model.total_variance <= 0.0 {
        return Err(Error::invalid("data has zero variance; no principal axis"));
    }
    let scores: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|c| {
            let axis: Vec<f64> = model.component(c).iter().map(|x| x.to_f64_lossless()).collect();
            let proj: Vec<f64> = m.row_iter().map(|r| dot_mixed(r, &axis)).collect();
            pearson(&proj, ci).map(|corr| corr.r.abs())
        })
        .collect::<Result<_>>()?;
    let best = (1..k).fold(0, |best, c| if scores[c] > scores[best] { c } else { best });
    let raw: Vec<f64> = model.component(best).iter().map(|x| x.to_f64_lossless()).collect();
    let stats = BTreeMap::from([
        ("component".to_string(), best as f64),
        ("components_considered".to_string(), k as f64),
        ("explained_variance".to_string(), model.explained_variance_ratio()[best]),
    ]);
    ConceptVector::aligned(ConceptMethod::PcaBest, raw, m, ci, stats)
}

/// Normal of a logistic decision boundary between median-split classes.
pub fn cv_probe_clf<T: Scalar>(m: &Matrix<T>, ci: &[f64], l2: Option<f64>) -> Result<ConceptVector<T>> {
    check_scores(m, ci, 2)?;
    let labels = binary_median_labels(ci)?;
    let fit = fit_logistic(m, &labels, l2)?;
    let raw: Vec<f64> = fit.model.weights.iter().map(|w| w.to_f64_lossless()).collect();
    let stats = BTreeMap::from([
        ("final_loss".to_string(), *fit.loss_trace.last().unwrap_or(&f64::NAN)),
        ("newton_steps".to_string(), (fit.loss_trace.len() - 1) as f64),
    ]);
    ConceptVector::aligned(ConceptMethod::ProbeClf, raw, m, ci, stats)
}

/// Ridge regression weights predicting the scores.
pub fn cv_probe_reg<T: Scalar>(m: &Matrix<T>, ci: &[f64], lambda: f64) -> Result<ConceptVector<T>> {
    check_scores(m, ci, 2)?;
    let model = fit_ridge(m, ci, lambda)?;
    let raw: Vec<f64> = model.weights.iter().map(|w| w.to_f64_lossless()).collect();
    if raw.iter().all(|&w| w == 0.0) {
        return Err(Error::invalid("ridge weights are all zero; lambda is too large"));
    }
    let stats = BTreeMap::from([("lambda".to_string(), lambda)]);
    ConceptVector::aligned(ConceptMethod::ProbeReg, raw, m, ci, stats)
}

/// Correlation-weighted sum of decoder atoms: the `per_side` most positively
/// and most negatively score-correlated atoms, weighted by their `r`. Dead
/// atoms (degenerate correlation) are never selected.
pub fn cv_sae<T: Scalar>(
    model: &SaeModel<T>,
    acts: &AtomActivations<T>,
    m: &Matrix<T>,
    ci: &[f64],
    per_side: usize,
) -> Result<ConceptVector<T>> {
    check_scores(m, ci, 2)?;
    if acts.m_dict != model.m_dict() || acts.n() != m.nrows() || model.d_in() != m.ncols() {
        return Err(Error::invalid("SAE model, activations and data disagree in shape"));
    }
    let corr = atom_ci_correlations(acts, ci)?;
    let mut live: Vec<usize> = (0..corr.len()).filter(|&j| !corr[j].degenerate).collect();
    live.sort_by(|&a, &b| corr[b].r.total_cmp(&corr[a].r).then(a.cmp(&b)));
    let selected: Vec<usize> = if live.len() < 2 * per_side {
        log::warn!(
            "only {} live atoms; composing from all of them instead of {}",
            live.len(),
            2 * per_side
        );
        live.clone()
    } else {
        live[..per_side].iter().chain(&live[live.len() - per_side..]).copied().collect()
    };
    let d = model.d_in();
    let mut raw = vec![0.0; d];
    for &j in &selected {
        let r = corr[j].r;
        for (i, x) in raw.iter_mut().enumerate() {
            *x += r * model.dec_weights.get(i, j).to_f64_lossless();
        }
    }
    if raw.iter().all(|&x| x == 0.0) {
        return Err(Error::invalid("composite SAE direction is zero"));
    }
    let stats = BTreeMap::from([
        ("atoms_selected".to_string(), selected.len() as f64),
        ("live_atoms".to_string(), live.len() as f64),
        ("top_atom_r".to_string(), live.first().map_or(0.0, |&j| corr[j].r)),
    ]);
    ConceptVector::aligned(ConceptMethod::SaeComposed, raw, m, ci, stats)
}

/// `dot(row_i, direction)` for every row; no centering.
pub fn project_onto<T: Scalar>(cv: &ConceptVector<T>, m: &Matrix<T>) -> Result<Vec<f64>> {
    if m.ncols() != cv.d() {
        return Err(Error::invalid(format!(
            "concept vector has {} dims, data has {}",
            cv.d(),
            m.ncols()
        )));
    }
    Ok(m.row_iter().map(|r| dot(r, &cv.direction)).collect())
}

/// Sample ids grouped by projection rank into equal-frequency thirds (the
/// lowest third takes any extra samples), each listed by descending projection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terciles {
    pub top: Vec<String>,
    pub middle: Vec<String>,
    pub bottom: Vec<String>,
}

pub fn tercile_examples(projections: &[f64], ids: &[String]) -> Result<Terciles> {
    let n = projections.len();
    if n < 3 || ids.len() != n {
        return Err(Error::invalid(format!(
            "terciles need at least 3 projections with matching ids ({n} projections, {} ids)",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| projections[a].total_cmp(&projections[b]).then(a.cmp(&b)));
    let mut groups: [Vec<usize>; 3] = Default::default();
    for (rank, &i) in order.iter().enumerate() {
        groups[rank * 3 / n].push(i);
    }
    let mut listed = groups.map(|g| g.into_iter().rev().map(|i| ids[i].clone()).collect::<Vec<_>>());
    Ok(Terciles {
        top: std::mem::take(&mut listed[2]),
        middle: std::mem::take(&mut listed[1]),
        bottom: std::mem::take(&mut listed[0]),
    })
}

/// Knobs shared by all concept methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConceptParams {
    pub methods: Vec<ConceptMethod>,
    pub pca_best_max_components: usize,
    /// Logistic penalty; `None` means `1/n`.
    pub probe_l2: Option<f64>,
    pub ridge_lambda: f64,
    pub sae: SaeConfig,
    pub sae_atoms_per_side: usize,
}

impl Default for ConceptParams {
    fn default() -> Self {
        ConceptParams {
            methods: ConceptMethod::ALL.to_vec(),
            pca_best_max_components: 1000,
            probe_l2: None,
            ridge_lambda: 1.0,
            sae: SaeConfig::default(),
            sae_atoms_per_side: SAE_ATOMS_PER_SIDE,
        }
    }
}

/// Fits one concept vector. `sae` must be given for [`ConceptMethod::SaeComposed`].
pub fn fit_concept<T: Scalar>(
    method: ConceptMethod,
    m: &Matrix<T>,
    ci: &[f64],
    params: &ConceptParams,
    sae: Option<&SaeModel<T>>,
) -> Result<ConceptVector<T>> {
    match method {
        ConceptMethod::DiffMeans => cv_diff_means(m, ci),
        ConceptMethod::PcaFirst => cv_pca_first(m, ci),
        ConceptMethod::PcaBest => cv_pca_best(m, ci, params.pca_best_max_components),
        ConceptMethod::ProbeClf => cv_probe_clf(m, ci, params.probe_l2),
        ConceptMethod::ProbeReg => cv_probe_reg(m, ci, params.ridge_lambda),
        ConceptMethod::SaeComposed => {
            let model = sae.ok_or_else(|| Error::invalid("sae_composed needs a trained SAE"))?;
            let acts = model.encode_matrix(m)?;
            cv_sae(model, &acts, m, ci, params.sae_atoms_per_side)
        }
    }
}

/// One cell of the layer x method grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveEntry<T> {
    pub vector: ConceptVector<T>,
    /// Pearson r between test-row projections and test scores.
    pub r_test: f64,
    pub n_test: usize,
}

fn check_disjoint(n: usize, train: &[usize], test: &[usize]) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in train {
        if i >= n {
            return Err(Error::invalid(format!("train row {i} out of range")));
        }
        seen[i] = true;
    }
    if let Some(&i) = test.iter().find(|&&i| i >= n || seen[i]) {
        return Err(Error::invalid(format!(
            "test row {i} is out of range or also in the training rows"
        )));
    }
    Ok(())
}

/// Fits every requested method on the training rows of every layer and
/// scores it on the test rows. Results are ordered by layer, then method.
pub fn concept_correlation_curve(
    layers: &[ActivationMatrix],
    ci: &[f64],
    train: &[usize],
    test: &[usize],
    params: &ConceptParams,
) -> Result<Vec<CurveEntry<f32>>> {
    let per_layer = layers
        .par_iter()
        .map(|layer| {
            let n = layer.n();
            if ci.len() != n {
                return Err(Error::invalid(format!(
                    "layer {} has {n} rows but there are {} scores",
                    layer.layer_id,
                    ci.len()
                )));
            }
            check_disjoint(n, train, test)?;
            let train_x = layer.data.select_rows(train);
            let test_x = layer.data.select_rows(test);
            let train_ci: Vec<f64> = train.iter().map(|&i| ci[i]).collect();
            let test_ci: Vec<f64> = test.iter().map(|&i| ci[i]).collect();
            let sae = if params.methods.contains(&ConceptMethod::SaeComposed) {
                Some(sae_train(&train_x, &params.sae)?.0)
            } else {
                None
            };
            params
                .methods
                .iter()
                .map(|&method| {
                    let vector = fit_concept(method, &train_x, &train_ci, params, sae.as_ref())?.with_layer(&layer.layer_id);
                    let proj = project_onto(&vector, &test_x)?;
                    let r_test = pearson(&proj, &test_ci)?.r;
                    Ok(CurveEntry {
                        vector,
                        r_test,
                        n_test: test.len(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_layer.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cosine;
    use crate::stats::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// `h = ci * w + noise`.
    fn planted(n: usize, d: usize, sigma: f64, seed: u64) -> (Matrix<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let w: Vec<f64> = {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&v);
            v.iter().map(|x| x / n).collect()
        };
        let ci: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let m = Matrix::from_fn(n, d, |i, j| ci[i] * w[j] + sigma * rng.sample::<f64, _>(StandardNormal));
        (m, ci, w)
    }

    #[test]
    fn diff_means_point_masses() {
        let m = Matrix::from_fn(20, 3, |i, j| if j == 0 { if i < 10 { -1.0 } else { 1.0 } } else { 0.0 });
        let ci: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let cv = cv_diff_means(&m, &ci).unwrap();
        assert_eq!(cv.direction, vec![1.0, 0.0, 0.0]);
        assert!(cv.sign_aligned);
        assert!(cv_diff_means(&m.select_rows(&[0, 1, 2, 3, 4]), &ci[..5]).is_err());
        let flat = Matrix::<f64>::zeros(20, 3);
        assert!(cv_diff_means(&flat, &ci).is_err());
    }

    #[test]
    fn diff_means_boundary_ties_follow_sample_order() {
        // ten samples, group size 2; samples 1..=4 tie at the top score
        let ci = [0.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.0];
        let m = Matrix::from_fn(10, 10, |i, j| f64::from(u8::from(i == j)));
        let cv = cv_diff_means(&m, &ci).unwrap();
        let positive: Vec<usize> = (0..10).filter(|&j| cv.direction[j] > 0.0).collect();
        let negative: Vec<usize> = (0..10).filter(|&j| cv.direction[j] < 0.0).collect();
        assert_eq!(positive, vec![1, 2]);
        assert_eq!(negative, vec![0, 9]);
    }

    #[test]
    fn planted_direction_recovered() {
        let (m, ci, w) = planted(2000, 64, 0.1, 1);
        let params = ConceptParams::default();
        for method in [ConceptMethod::DiffMeans, ConceptMethod::ProbeClf, ConceptMethod::PcaBest] {
            let cv = fit_concept(method, &m, &ci, &params, None).unwrap();
            assert!(cosine(&cv.direction, &w).unwrap() >= 0.9, "{method}");
        }
        let reg = cv_probe_reg(&m, &ci, 1.0).unwrap();
        assert!(cosine(&reg.direction, &w).unwrap() >= 0.95);
    }

    #[test]
    fn ridge_direction_exact_linear() {
        let mut rng = rng_from_seed(4);
        let m = Matrix::<f64>::from_fn(300, 10, |_, _| rng.sample(StandardNormal));
        let w: Vec<f64> = (0..10).map(|j| (j as f64 - 4.5) / 10.0).collect();
        let ci: Vec<f64> = m.row_iter().map(|r| dot(r, &w)).collect();
        let cv = cv_probe_reg(&m, &ci, 1e-9).unwrap();
        assert!(cosine(&cv.direction, &w).unwrap() >= 0.999);
        assert!(cv_probe_reg(&m, &ci, f64::INFINITY).is_err());
    }

    #[test]
    fn pca_first_along_single_axis_and_sign() {
        let w = [0.6, 0.8];
        let t: Vec<f64> = (0..30).map(|i| i as f64 - 14.5).collect();
        let m = Matrix::from_fn(30, 2, |i, j| t[i] * w[j]);
        let ci: Vec<f64> = t.iter().map(|x| 0.5 + x / 40.0).collect();
        let cv = cv_pca_first(&m, &ci).unwrap();
        assert!((cv.direction[0] - 0.6).abs() < 1e-9 && (cv.direction[1] - 0.8).abs() < 1e-9);
        let flipped: Vec<f64> = ci.iter().map(|c| 1.0 - c).collect();
        let cv2 = cv_pca_first(&m, &flipped).unwrap();
        assert!((cv2.direction[0] + 0.6).abs() < 1e-9);
        assert!(cv_pca_first(&Matrix::<f64>::zeros(5, 2), &ci[..5]).is_err());
    }

    #[test]
    fn pca_best_picks_third_axis() {
        let mut rng = rng_from_seed(12);
        let n = 500;
        let ci: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        // axis variances 9, 4, ~1 (signal), 0.25
        let m = Matrix::from_fn(n, 4, |i, j| match j {
            0 => 3.0 * rng.sample::<f64, _>(StandardNormal),
            1 => 2.0 * rng.sample::<f64, _>(StandardNormal),
            2 => 3.4 * (ci[i] - 0.5),
            _ => 0.5 * rng.sample::<f64, _>(StandardNormal),
        });
        let cv = cv_pca_best(&m, &ci, 1000).unwrap();
        assert_eq!(cv.fit_stats["component"], 2.0);
        assert_eq!(cv.fit_stats["components_considered"], 4.0);
        assert!(cv.direction[2] > 0.999);
        let first = cv_pca_first(&m, &ci).unwrap();
        assert!(first.fit_stats["train_r"] < 0.2);
    }

    #[test]
    fn pca_best_component_cap() {
        let (m, ci, _) = planted(50, 2, 0.1, 3);
        let cv = cv_pca_best(&m, &ci, 1000).unwrap();
        assert_eq!(cv.fit_stats["components_considered"], 2.0);
    }

    #[test]
    fn probe_clf_alignment_and_errors() {
        let (m, ci, _) = planted(200, 8, 0.1, 5);
        let a = cv_probe_clf(&m, &ci, None).unwrap();
        let reversed: Vec<f64> = ci.iter().map(|c| 1.0 - c).collect();
        let b = cv_probe_clf(&m, &reversed, None).unwrap();
        // reversing the scores swaps the classes; alignment then flips the vector back
        for (x, y) in a.direction.iter().zip(&b.direction) {
            assert!((x + y).abs() < 1e-9);
        }
        assert!(cv_probe_clf(&m, &[0.5; 200], None).is_err());
    }

    #[test]
    fn sae_composition_by_hand() {
        // decoder atoms e0, e1, e2; atom 0 tracks ci, atom 1 anti-tracks, atom 2 dead
        let model = SaeModel {
            k: 2,
            enc_weights: Matrix::from_fn(3, 3, |i, j| f64::from(u8::from(i == j))),
            enc_bias: vec![0.0; 3],
            dec_weights: Matrix::from_fn(3, 3, |i, j| f64::from(u8::from(i == j))),
            pre_bias: vec![0.0; 3],
        };
        let ci: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let m = Matrix::from_fn(10, 3, |i, j| match j {
            0 => ci[i],
            1 => 1.0 - ci[i],
            _ => 0.0,
        });
        let acts = model.encode_matrix(&m).unwrap();
        let cv = cv_sae(&model, &acts, &m, &ci, 16).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((cv.direction[0] - s).abs() < 1e-9);
        assert!((cv.direction[1] + s).abs() < 1e-9);
        assert_eq!(cv.direction[2], 0.0);
        assert_eq!(cv.fit_stats["live_atoms"], 2.0);

        let only_first = Matrix::from_fn(10, 3, |i, j| if j == 0 { ci[i] } else { 0.0 });
        let acts = model.encode_matrix(&only_first).unwrap();
        let cv = cv_sae(&model, &acts, &only_first, &ci, 16).unwrap();
        assert_eq!(cv.direction, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn planted_sae_end_to_end() {
        let (m, ci, _) = planted(2000, 64, 0.1, 7);
        let train: Vec<usize> = (0..1400).collect();
        let test: Vec<usize> = (1400..2000).collect();
        let (tx, vx) = (m.select_rows(&train), m.select_rows(&test));
        let cfg = SaeConfig { m_dict: Some(256), k: 16, epochs: 10, lr: 1e-3, batch_size: 64, seed: 3 };
        let (model, _) = sae_train(&tx, &cfg).unwrap();
        let cv = fit_concept(ConceptMethod::SaeComposed, &tx, &ci[..1400], &ConceptParams::default(), Some(&model)).unwrap();
        let r = pearson(&project_onto(&cv, &vx).unwrap(), &ci[1400..]).unwrap().r;
        assert!(r >= 0.7, "held-out r {r}");
    }

    #[test]
    fn projection_basics() {
        let cv = ConceptVector {
            method: ConceptMethod::DiffMeans,
            layer_id: "vit.0".into(),
            direction: vec![1.0, 0.0],
            sign_aligned: true,
            fit_stats: BTreeMap::new(),
        };
        let m = Matrix::from_rows(&[[3.0, 4.0], [-1.0, 2.0]]).unwrap();
        assert_eq!(project_onto(&cv, &m).unwrap(), vec![3.0, -1.0]);
        assert!(project_onto(&cv, &Matrix::<f64>::zeros(1, 3)).is_err());
    }

    #[test]
    fn terciles() {
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let p: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let t = tercile_examples(&p, &ids).unwrap();
        assert_eq!((t.bottom.len(), t.middle.len(), t.top.len()), (4, 3, 3));
        assert_eq!(t.top, vec!["s9", "s8", "s7"]);
        assert_eq!(t.bottom, vec!["s3", "s2", "s1", "s0"]);
        let t9 = tercile_examples(&p[..9], &ids[..9]).unwrap();
        assert_eq!((t9.bottom.len(), t9.middle.len(), t9.top.len()), (3, 3, 3));
        assert!(tercile_examples(&p[..2], &ids[..2]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let (m, ci, _) = planted(100, 5, 0.1, 2);
        let cv = cv_diff_means(&m.cast::<f32>(), &ci).unwrap().with_layer("llm.3");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("llm.3.diff_means.json");
        cv.save(&path).unwrap();
        assert!(dir.path().join("llm.3.diff_means.actv").exists());
        assert_eq!(ConceptVector::<f32>::load(&path).unwrap(), cv);
    }

    #[test]
    fn curve_rejects_leakage() {
        let (m, ci, _) = planted(60, 4, 0.1, 9);
        let layer = ActivationMatrix::new("vit.0", m.cast()).unwrap();
        let params = ConceptParams { methods: vec![ConceptMethod::DiffMeans], ..Default::default() };
        let train: Vec<usize> = (0..40).collect();
        let overlapping: Vec<usize> = (30..60).collect();
        assert!(concept_correlation_curve(std::slice::from_ref(&layer), &ci, &train, &overlapping, &params).is_err());
        let test: Vec<usize> = (40..60).collect();
        let curve = concept_correlation_curve(&[layer], &ci, &train, &test, &params).unwrap();
        assert_eq!(curve.len(), 1);
        assert_eq!(curve[0].n_test, 20);
        assert!(curve[0].r_test > 0.8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn directions_unit_and_aligned(seed in 0u64..500) {
            let (m, ci, _) = planted(80, 6, 0.3, seed);
            for method in [ConceptMethod::DiffMeans, ConceptMethod::PcaFirst, ConceptMethod::PcaBest,
                           ConceptMethod::ProbeClf, ConceptMethod::ProbeReg] {
                let cv = fit_concept(method, &m, &ci, &ConceptParams::default(), None).unwrap();
                prop_assert!((norm(&cv.direction) - 1.0).abs() < 1e-6);
                let r = pearson(&project_onto(&cv, &m).unwrap(), &ci).unwrap().r;
                prop_assert!(r >= 0.0);
            }
        }

        #[test]
        fn scale_invariance(seed in 0u64..500, scale in 0.1f64..10.0) {
            let (m, ci, _) = planted(80, 6, 0.3, seed);
            let scaled = m.map(|x| x * scale);
            let params = ConceptParams { probe_l2: Some(1e-2), ..Default::default() };
            for method in [ConceptMethod::DiffMeans, ConceptMethod::PcaFirst, ConceptMethod::PcaBest] {
                let a = fit_concept(method, &m, &ci, &params, None).unwrap();
                let b = fit_concept(method, &scaled, &ci, &params, None).unwrap();
                for (x, y) in a.direction.iter().zip(&b.direction) {
                    prop_assert!((x - y).abs() < 1e-6);
                }
            }
            // ridge: scaling the data by s is equivalent to scaling lambda by s^2
            let a = cv_probe_reg(&m, &ci, 0.7).unwrap();
            let b = cv_probe_reg(&scaled, &ci, 0.7 * scale * scale).unwrap();
            for (x, y) in a.direction.iter().zip(&b.direction) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn projection_linear(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let (m, ci, _) = planted(30, 4, 0.3, seed);
            let cv = cv_diff_means(&m, &ci).unwrap();
            let x = m.select_rows(&(0..15).collect::<Vec<_>>());
            let y = m.select_rows(&(15..30).collect::<Vec<_>>());
            let combo = Matrix::from_fn(15, 4, |i, j| a * x.get(i, j) + b * y.get(i, j));
            let (px, py, pc) = (project_onto(&cv, &x).unwrap(), project_onto(&cv, &y).unwrap(), project_onto(&cv, &combo).unwrap());
            for i in 0..15 {
                prop_assert!((pc[i] - (a * px[i] + b * py[i])).abs() < 1e-9);
            }
        }
    }
}
