//! Synthetic activation stores with planted structure.
//!
//! Each layer is generated as
//!
//! ```text
//! h_i = strength(layer) * signal_scale * ci_i * w_layer
//!     + sum_a nuisance_scale * z_ia * u_layer,a
//!     + noise_sigma * eps_i
//! ```
//!
//! with unit directions `w`, `u`, standard normal `z` (shared by all layers,
//! like image properties unrelated to the score) and `eps`, and scores drawn
//! from a right-skewed Beta distribution.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats::{derive_seed, rng_from_seed, SeededRng};
use crate::store::{ActivationMatrix, ActivationStore, SampleManifest};

/// Score bins used for the stratified split of generated stores.
pub const SYNTH_BINS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub vision_layers: usize,
    pub language_layers: usize,
    pub d_vision: usize,
    pub d_language: usize,
    /// Signal strength per layer in vision-then-language order; empty means
    /// a linear ramp from 0 to 1.
    pub strengths: Vec<f64>,
    pub signal_scale: f64,
    pub noise_sigma: f64,
    pub nuisance_axes: usize,
    pub nuisance_scale: f64,
    /// Beta shape parameters of the score distribution.
    pub ci_alpha: f64,
    pub ci_beta: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 600,
            vision_layers: 3,
            language_layers: 3,
            d_vision: 64,
            d_language: 64,
            strengths: Vec::new(),
            signal_scale: 10.0,
            noise_sigma: 0.3,
            nuisance_axes: 2,
            nuisance_scale: 1.0,
            ci_alpha: 2.0,
            ci_beta: 5.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn n_layers(&self) -> usize {
        self.vision_layers + self.language_layers
    }

    /// Layer ids (`vit.*` then `llm.*`) with their strength and width.
    pub fn layer_plan(&self) -> Result<Vec<(String, f64, usize)>> {
        let total = self.n_layers();
        if total == 0 {
            return Err(Error::invalid("synthetic store needs at least one layer"));
        }
        let strengths = if self.strengths.is_empty() {
            (0..total)
                .map(|l| if total == 1 { 1.0 } else { l as f64 / (total - 1) as f64 })
                .collect()
        } else if self.strengths.len() == total {
            self.strengths.clone()
        } else {
            return Err(Error::invalid(format!(
                "{} strengths given for {total} layers",
                self.strengths.len()
            )));
        };
        let vision = (0..self.vision_layers).map(|i| (format!("vit.{i}"), self.d_vision));
        let language = (0..self.language_layers).map(|i| (format!("llm.{i}"), self.d_language));
        Ok(vision
            .chain(language)
            .zip(strengths)
            .map(|((id, d), s)| (id, s, d))
            .collect())
    }

    fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(Error::invalid("synthetic stores need at least 20 samples"));
        }
        if (self.vision_layers > 0 && self.d_vision == 0) || (self.language_layers > 0 && self.d_language == 0) {
            return Err(Error::invalid("layer width must be positive"));
        }
        let finite = [self.signal_scale, self.noise_sigma, self.nuisance_scale];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) || self.strengths.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("scales and strengths must be finite and nonnegative"));
        }
        if !(self.ci_alpha > 0.0 && self.ci_beta > 0.0) {
            return Err(Error::invalid("Beta shape parameters must be positive"));
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = crate::scalar::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Draws scores from `Beta(alpha, beta)`.
pub fn sample_scores(n: usize, alpha: f64, beta: f64, seed: u64) -> Result<Vec<f64>> {
    let dist = Beta::new(alpha, beta).map_err(|e| Error::invalid(format!("bad Beta parameters: {e}")))?;
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Builds an in-memory store following `spec`; fully determined by `spec.seed`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<ActivationStore> {
    spec.validate()?;
    let plan = spec.layer_plan()?;
    let ci = sample_scores(spec.n, spec.ci_alpha, spec.ci_beta, derive_seed(spec.seed, 0))?;
    let mut factor_rng = rng_from_seed(derive_seed(spec.seed, 1));
    let factors: Vec<Vec<f64>> = (0..spec.n)
        .map(|_| (0..spec.nuisance_axes).map(|_| factor_rng.sample(StandardNormal)).collect())
        .collect();

    let layers = plan
        .iter()
        .enumerate()
        .map(|(l, (id, strength, d))| {
            let mut rng = rng_from_seed(derive_seed(spec.seed, 100 + l as u64));
            let w = unit_vector(&mut rng, *d);
            let nuisance: Vec<Vec<f64>> = (0..spec.nuisance_axes).map(|_| unit_vector(&mut rng, *d)).collect();
            let amplitude = strength * spec.signal_scale;
            let data = Matrix::from_fn(spec.n, *d, |i, j| {
                let signal = amplitude * ci[i] * w[j];
                let structure: f64 = factors[i].iter().zip(&nuisance).map(|(z, u)| spec.nuisance_scale * z * u[j]).sum();
                let noise = spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                (signal + structure + noise) as f32
            });
            ActivationMatrix::new(id.clone(), data)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = SampleManifest::from_scores(&ci, SYNTH_BINS, spec.seed)?;
    ActivationStore::new(manifest, layers)
}

/// `h = ci * w + nuisance_scale * z * u + sigma * eps` with unit `w`, and an
/// optional nuisance axis `u` orthogonal to `w`. Returns `(h, ci, w)`; scores
/// are uniform on `[0, 1]`.
pub fn planted_direction(n: usize, d: usize, sigma: f64, nuisance_scale: f64, seed: u64) -> (Matrix<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let w = unit_vector(&mut rng, d);
    let u = {
        let v = unit_vector(&mut rng, d);
        let along = crate::scalar::dot(&v, &w);
        let orth: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a - along * b).collect();
        let n = crate::scalar::norm(&orth);
        orth.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let ci: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let m = Matrix::from_fn(n, d, |i, j| {
        ci[i] * w[j] + nuisance_scale * z[i] * u[j] + sigma * rng.sample::<f64, _>(StandardNormal)
    });
    (m, ci, w)
}

/// Samples that are `k`-sparse nonnegative combinations of `m` random unit
/// atoms in `d` dimensions. Returns `(data, atoms)` with atoms as rows.
pub fn sparse_dictionary_data(n: usize, d: usize, m: usize, k: usize, seed: u64) -> Result<(Matrix<f64>, Matrix<f64>)> {
    if k == 0 || k > m {
        return Err(Error::invalid(format!("sparsity {k} must lie in 1..={m}")));
    }
    let mut rng = rng_from_seed(seed);
    let atoms: Vec<Vec<f64>> = (0..m).map(|_| unit_vector(&mut rng, d)).collect();
    let mut data = Matrix::zeros(n, d);
    let pool: Vec<usize> = (0..m).collect();
    for i in 0..n {
        let chosen = rand::seq::index::sample(&mut rng, pool.len(), k);
        for j in chosen.iter() {
            let coef: f64 = rng.random_range(0.5..1.5);
            for (x, a) in data.row_mut(i).iter_mut().zip(&atoms[j]) {
                *x += coef * a;
            }
        }
    }
    Ok((data, Matrix::from_rows(&atoms)?))
}
