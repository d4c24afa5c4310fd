//! Top-K sparse autoencoder: an overcomplete dictionary whose unit-norm
//! decoder columns ("atoms") serve as candidate feature directions.
//!
//! ```text
//! a     = topk(relu(W_enc (h - b_pre) + b_enc))
//! h_hat = W_dec a + b_pre
//! ```

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::stats::{derive_seed, pearson, rng_from_seed, Correlation};
use crate::store::format::{parse_block, write_block};

/// Default dictionary size as a multiple of the input dimension.
pub const DEFAULT_EXPANSION: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel<T> {
    pub k: usize,
    /// `m x d`.
    pub enc_weights: Matrix<T>,
    pub enc_bias: Vec<T>,
    /// `d x m`, unit-norm columns.
    pub dec_weights: Matrix<T>,
    pub pre_bias: Vec<T>,
}

/// Nonzero entries of one code, indices ascending, values positive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseCode<T> {
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> SparseCode<T> {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self, m: usize) -> Vec<T> {
        let mut dense = vec![T::zero(); m];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            dense[j] = v;
        }
        dense
    }
}

/// Codes for a batch of samples, one [`SparseCode`] per row.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomActivations<T> {
    pub m_dict: usize,
    pub rows: Vec<SparseCode<T>>,
}

impl<T: Scalar> AtomActivations<T> {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Dense view of atom `j` across samples, zeros included.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|code| {
                code.indices
                    .binary_search(&j)
                    .map_or(0.0, |p| code.values[p].to_f64_lossless())
            })
            .collect()
    }
}

impl<T: Scalar> SaeModel<T> {
    pub fn d_in(&self) -> usize {
        self.enc_weights.ncols()
    }

    pub fn m_dict(&self) -> usize {
        self.enc_weights.nrows()
    }

    /// Atom `j` as a `d`-vector.
    pub fn atom(&self, j: usize) -> Vec<T> {
        self.dec_weights.column(j)
    }

    fn check(&self) -> Result<()> {
        let (m, d) = self.enc_weights.shape();
        if self.dec_weights.shape() != (d, m) || self.enc_bias.len() != m || self.pre_bias.len() != d {
            return Err(Error::invalid("inconsistent SAE parameter shapes"));
        }
        if self.k == 0 || self.k > m {
            return Err(Error::invalid(format!("k = {} must lie in 1..={m}", self.k)));
        }
        Ok(())
    }

    /// Top-K code of one input vector.
    pub fn encode(&self, h: &[T]) -> Result<SparseCode<T>> {
        if h.len() != self.d_in() {
            return Err(Error::invalid(format!(
                "SAE expects {} inputs, got {}",
                self.d_in(),
                h.len()
            )));
        }
        let centered: Vec<f64> = h
            .iter()
            .zip(&self.pre_bias)
            .map(|(x, b)| x.to_f64_lossless() - b.to_f64_lossless())
            .collect();
        let pre: Vec<f64> = self
            .enc_weights
            .row_iter()
            .zip(&self.enc_bias)
            .map(|(w, b)| {
                w.iter().zip(&centered).map(|(w, c)| w.to_f64_lossless() * c).sum::<f64>() + b.to_f64_lossless()
            })
            .collect();
        let active = top_k_positive(&pre, self.k);
        Ok(SparseCode {
            values: active.iter().map(|&j| T::of(pre[j])).collect(),
            indices: active,
        })
    }

    pub fn encode_matrix(&self, m: &Matrix<T>) -> Result<AtomActivations<T>> {
        let rows = (0..m.nrows())
            .into_par_iter()
            .map(|i| self.encode(m.row(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(AtomActivations {
            m_dict: self.m_dict(),
            rows,
        })
    }

    /// `W_dec a + b_pre`, touching only the active columns.
    pub fn decode(&self, code: &SparseCode<T>) -> Result<Vec<T>> {
        if let Some(&j) = code.indices.iter().find(|&&j| j >= self.m_dict()) {
            return Err(Error::invalid(format!(
                "atom index {j} out of range for {} atoms",
                self.m_dict()
            )));
        }
        let d = self.d_in();
        let mut out: Vec<f64> = self.pre_bias.iter().map(|b| b.to_f64_lossless()).collect();
        for (&j, &a) in code.indices.iter().zip(&code.values) {
            let a = a.to_f64_lossless();
            for (r, o) in out.iter_mut().enumerate().take(d) {
                *o += self.dec_weights.get(r, j).to_f64_lossless() * a;
            }
        }
        Ok(out.into_iter().map(T::of).collect())
    }

    /// Decoder column norms' largest deviation from 1.
    pub fn decoder_norm_error(&self) -> f64 {
        (0..self.m_dict())
            .map(|j| (crate::scalar::norm(&self.atom(j)) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the four parameter blocks (`enc_weights`, `enc_bias` as `1 x m`,
    /// `dec_weights`, `pre_bias` as `1 x d`) to `path` in ACTV1 layout, plus a
    /// JSON sidecar `<path>.json` describing them.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.check()?;
        let blocks: [(&str, Matrix<f32>); 4] = [
            ("enc_weights", self.enc_weights.cast()),
            ("enc_bias", Matrix::from_fn(1, self.m_dict(), |_, j| self.enc_bias[j].to_f32().unwrap_or(f32::NAN))),
            ("dec_weights", self.dec_weights.cast()),
            ("pre_bias", Matrix::from_fn(1, self.d_in(), |_, j| self.pre_bias[j].to_f32().unwrap_or(f32::NAN))),
        ];
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (_, block) in &blocks {
            if let Some((r, c)) = block.first_non_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
            write_block(&mut out, block).map_err(|e| Error::io(path, e))?;
        }
        std::io::Write::flush(&mut out).map_err(|e| Error::io(path, e))?;
        let sidecar = SaeSidecar {
            d_in: self.d_in(),
            m_dict: self.m_dict(),
            k: self.k,
            blocks: blocks
                .iter()
                .map(|(name, b)| BlockShape {
                    name: name.to_string(),
                    rows: b.nrows(),
                    cols: b.ncols(),
                })
                .collect(),
        };
        let json_path = sidecar_path(path);
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
        fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json_path = sidecar_path(path);
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: SaeSidecar = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: json_path.clone(),
            source,
        })?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut offset = 0;
        let mut blocks = Vec::new();
        for shape in &sidecar.blocks {
            let (block, used) = parse_block(path, &bytes[offset..])?;
            if block.shape() != (shape.rows, shape.cols) {
                return Err(Error::format(
                    path,
                    format!("block {} is {:?}, sidecar says {}x{}", shape.name, block.shape(), shape.rows, shape.cols),
                ));
            }
            offset += used;
            blocks.push(block.cast::<T>());
        }
        if blocks.len() != 4 || offset != bytes.len() {
            return Err(Error::format(path, "expected exactly four parameter blocks"));
        }
        let pre_bias = blocks.pop().unwrap().into_vec();
        let dec_weights = blocks.pop().unwrap();
        let enc_bias = blocks.pop().unwrap().into_vec();
        let enc_weights = blocks.pop().unwrap();
        let model = SaeModel {
            k: sidecar.k,
            enc_weights,
            enc_bias,
            dec_weights,
            pre_bias,
        };
        model.check().map_err(|e| Error::format(path, e.to_string()))?;
        if model.d_in() != sidecar.d_in || model.m_dict() != sidecar.m_dict {
            return Err(Error::format(path, "block shapes disagree with sidecar dimensions"));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct BlockShape {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct SaeSidecar {
    d_in: usize,
    m_dict: usize,
    k: usize,
    blocks: Vec<BlockShape>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Indices of the `k` largest strictly positive entries, ascending; ties go
/// to the lower index.
fn top_k_positive(pre: &[f64], k: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..pre.len()).filter(|&j| pre[j] > 0.0).collect();
    if candidates.len() > k {
        let by_value = |a: &usize, b: &usize| pre[*b].total_cmp(&pre[*a]).then(a.cmp(b));
        candidates.select_nth_unstable_by(k - 1, by_value);
        candidates.truncate(k);
    }
    candidates.sort_unstable();
    candidates
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaeConfig {
    /// Dictionary size; `None` means `DEFAULT_EXPANSION * d`.
    pub m_dict: Option<usize>,
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        SaeConfig {
            m_dict: None,
            k: 16,
            epochs: 20,
            lr: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeEpochLog {
    pub epoch: usize,
    /// Mean over batches of the per-sample squared reconstruction error.
    pub loss: f64,
    /// Atoms that never fired during the epoch.
    pub dead_atoms: usize,
    pub decoder_norm_error: f64,
}

/// Parameters in f64 with the decoder stored by column (`dec[j*d..]` is atom `j`).
#[derive(Clone)]
struct Params {
    d: usize,
    m: usize,
    k: usize,
    enc: Vec<f64>,
    enc_b: Vec<f64>,
    dec: Vec<f64>,
    pre: Vec<f64>,
}

struct Grads {
    enc: Vec<f64>,
    enc_b: Vec<f64>,
    dec: Vec<f64>,
    pre: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: i32) {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (c1, c2) = (1.0 - f64::powi(b1, t), 1.0 - f64::powi(b2, t));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// One sample's forward pass.
struct Forward {
    active: Vec<usize>,
    code: Vec<f64>,
    /// `h_hat - h`.
    residual: Vec<f64>,
}

impl Params {
    fn pre_activations(&self, h: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = h.iter().zip(&self.pre).map(|(x, b)| x - b).collect();
        (0..self.m)
            .map(|j| {
                let w = &self.enc[j * self.d..(j + 1) * self.d];
                w.iter().zip(&centered).map(|(a, b)| a * b).sum::<f64>() + self.enc_b[j]
            })
            .collect()
    }

    /// Forward pass; `fixed` overrides top-K selection with a given active set.
    fn forward(&self, h: &[f64], fixed: Option<&[usize]>) -> Forward {
        let pre = self.pre_activations(h);
        let active = match fixed {
            Some(set) => set.to_vec(),
            None => top_k_positive(&pre, self.k),
        };
        let code: Vec<f64> = active.iter().map(|&j| pre[j].max(0.0)).collect();
        let mut residual: Vec<f64> = self.pre.iter().zip(h).map(|(b, x)| b - x).collect();
        for (&j, &a) in active.iter().zip(&code) {
            let col = &self.dec[j * self.d..(j + 1) * self.d];
            residual.iter_mut().zip(col).for_each(|(r, c)| *r += a * c);
        }
        Forward { active, code, residual }
    }

    /// Mean squared reconstruction error over `rows` and its gradient.
    fn loss_and_grad(&self, rows: &[&[f64]], fixed: Option<&[Vec<usize>]>) -> (f64, Grads, Vec<Vec<usize>>) {
        let forwards: Vec<Forward> = rows
            .par_iter()
            .enumerate()
            .map(|(i, h)| self.forward(h, fixed.map(|f| f[i].as_slice())))
            .collect();
        let (d, m) = (self.d, self.m);
        let scale = 2.0 / rows.len() as f64;
        let mut g = Grads {
            enc: vec![0.0; m * d],
            enc_b: vec![0.0; m],
            dec: vec![0.0; m * d],
            pre: vec![0.0; d],
        };
        let mut loss = 0.0;
        for (h, f) in rows.iter().zip(&forwards) {
            loss += f.residual.iter().map(|r| r * r).sum::<f64>();
            let gh: Vec<f64> = f.residual.iter().map(|r| r * scale).collect();
            g.pre.iter_mut().zip(&gh).for_each(|(p, x)| *p += x);
            for (&j, &a) in f.active.iter().zip(&f.code) {
                let col = &self.dec[j * d..(j + 1) * d];
                let da: f64 = col.iter().zip(&gh).map(|(c, x)| c * x).sum();
                g.dec[j * d..(j + 1) * d].iter_mut().zip(&gh).for_each(|(gd, x)| *gd += a * x);
                if a > 0.0 {
                    g.enc_b[j] += da;
                    let w = &self.enc[j * d..(j + 1) * d];
                    let ge = &mut g.enc[j * d..(j + 1) * d];
                    for r in 0..d {
                        ge[r] += da * (h[r] - self.pre[r]);
                        g.pre[r] -= da * w[r];
                    }
                }
            }
        }
        let active = forwards.into_iter().map(|f| f.active).collect();
        (loss / rows.len() as f64, g, active)
    }

    fn normalize_decoder(&mut self) {
        for col in self.dec.chunks_mut(self.d) {
            let n = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                col.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    /// Removes the gradient component parallel to each (unit) decoder column.
    fn project_decoder_grad(&self, grad: &mut [f64]) {
        for (col, g) in self.dec.chunks(self.d).zip(grad.chunks_mut(self.d)) {
            let along: f64 = col.iter().zip(g.iter()).map(|(c, x)| c * x).sum();
            g.iter_mut().zip(col).for_each(|(x, c)| *x -= along * c);
        }
    }

    fn into_model<T: Scalar>(self) -> SaeModel<T> {
        let (d, m) = (self.d, self.m);
        SaeModel {
            k: self.k,
            enc_weights: Matrix::from_fn(m, d, |j, r| T::of(self.enc[j * d + r])),
            enc_bias: self.enc_b.iter().map(|&b| T::of(b)).collect(),
            dec_weights: Matrix::from_fn(d, m, |r, j| T::of(self.dec[j * d + r])),
            pre_bias: self.pre.iter().map(|&b| T::of(b)).collect(),
        }
    }
}

/// Trains a top-K SAE with Adam on mini-batches of `m`'s rows.
///
/// Decoder columns start as random unit vectors, the encoder as their
/// transpose and the pre-bias as the data mean. After each step decoder
/// gradients are projected orthogonal to their columns and the columns are
/// renormalized. `epochs = 0` returns the initialization and an empty log.
pub fn sae_train<T: Scalar>(m: &Matrix<T>, cfg: &SaeConfig) -> Result<(SaeModel<T>, Vec<SaeEpochLog>)> {
    let (n, d) = m.shape();
    let m_dict = cfg.m_dict.unwrap_or(DEFAULT_EXPANSION * d);
    if n == 0 || d == 0 {
        return Err(Error::invalid("SAE training data is empty"));
    }
    if cfg.k == 0 || cfg.k > m_dict {
        return Err(Error::invalid(format!("k = {} must lie in 1..={m_dict}", cfg.k)));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::invalid("batch_size and lr must be positive"));
    }
    if n < cfg.batch_size {
        return Err(Error::invalid(format!(
            "{n} training rows is fewer than one batch of {}",
            cfg.batch_size
        )));
    }
    if m_dict < d {
        log::warn!("dictionary of {m_dict} atoms is undercomplete for d = {d}");
    }
    let data: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().map(|x| x.to_f64_lossless()).collect()).collect();

    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0));
    let mut params = Params {
        d,
        m: m_dict,
        k: cfg.k,
        enc: Vec::new(),
        enc_b: vec![0.0; m_dict],
        dec: (0..m_dict * d).map(|_| rng.sample(StandardNormal)).collect(),
        pre: m.column_means(),
    };
    params.normalize_decoder();
    params.enc = params.dec.clone();

    let mut adam_enc = Adam::new(m_dict * d);
    let mut adam_enc_b = Adam::new(m_dict);
    let mut adam_dec = Adam::new(m_dict * d);
    let mut adam_pre = Adam::new(d);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut t = 0i32;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, epoch as u64 + 1)));
        let mut fired = vec![false; m_dict];
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let rows: Vec<&[f64]> = batch.iter().map(|&i| data[i].as_slice()).collect();
            let (loss, mut g, active) = params.loss_and_grad(&rows, None);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("SAE loss is NaN at epoch {epoch}, step {step}")));
            }
            active.iter().flatten().for_each(|&j| fired[j] = true);
            loss_sum += loss;
            batches += 1;
            t += 1;
            params.project_decoder_grad(&mut g.dec);
            adam_enc.step(&mut params.enc, &g.enc, cfg.lr, t);
            adam_enc_b.step(&mut params.enc_b, &g.enc_b, cfg.lr, t);
            adam_dec.step(&mut params.dec, &g.dec, cfg.lr, t);
            adam_pre.step(&mut params.pre, &g.pre, cfg.lr, t);
            params.normalize_decoder();
        }
        let decoder_norm_error = params
            .dec
            .chunks(d)
            .map(|c| (c.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max);
        let entry = SaeEpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            dead_atoms: fired.iter().filter(|f| !**f).count(),
            decoder_norm_error,
        };
        log::debug!("sae epoch {epoch}: loss {:.6e}, dead {}", entry.loss, entry.dead_atoms);
        log.push(entry);
    }
    Ok((params.into_model(), log))
}

/// Pearson correlation of each atom's dense activation column with `ci`.
/// Dead atoms and constant `ci` give `r = 0` flagged degenerate.
pub fn atom_ci_correlations<T: Scalar>(acts: &AtomActivations<T>, ci: &[f64]) -> Result<Vec<Correlation>> {
    if acts.n() != ci.len() {
        return Err(Error::invalid(format!(
            "{} activation rows but {} scores",
            acts.n(),
            ci.len()
        )));
    }
    (0..acts.m_dict)
        .into_par_iter()
        .map(|j| pearson(&acts.column(j), ci))
        .collect()
}

/// Fraction of variance explained: `1 - SSE / SST` with SST about column means.
pub fn reconstruction_r2<T: Scalar>(model: &SaeModel<T>, m: &Matrix<T>) -> Result<f64> {
    let means = m.column_means();
    let acts = model.encode_matrix(m)?;
    let mut sse = 0.0;
    let mut sst = 0.0;
    for (row, code) in m.row_iter().zip(&acts.rows) {
        let recon = model.decode(code)?;
        for ((x, r), mu) in row.iter().zip(&recon).zip(&means) {
            let x = x.to_f64_lossless();
            sse += (x - r.to_f64_lossless()).powi(2);
            sst += (x - mu).powi(2);
        }
    }
    if sst == 0.0 {
        return Err(Error::invalid("reconstruction R^2 undefined for constant data"));
    }
    Ok(1.0 - sse / sst)
}
