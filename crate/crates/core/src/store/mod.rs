//! Activation dumps, the sample manifest, and dataset preparation
//! (stratified subsampling, splitting, deduplication).

mod dedup;
pub mod format;
mod manifest;
mod sampling;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use dedup::{find_duplicates, mark_duplicates, DuplicatePair, DEFAULT_DUPLICATE_THRESHOLD};
pub use manifest::{SampleManifest, SampleRecord, Split, MANIFEST_FILE};
pub use sampling::{assign_bins, make_split, quantile_edges, stratified_subsample, SPLIT_FRACTIONS};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const ACTIVATION_EXTENSION: &str = "actv";

/// Which half of the vision-language model a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Vision,
    Language,
}

impl Component {
    /// Layer-id prefix: `vit` or `llm`.
    pub fn prefix(self) -> &'static str {
        match self {
            Component::Vision => "vit",
            Component::Language => "llm",
        }
    }

    pub fn from_layer_id(layer_id: &str) -> Option<Self> {
        match layer_id.split('.').next()? {
            "vit" => Some(Component::Vision),
            "llm" => Some(Component::Language),
            _ => None,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Vision => "vision",
            Component::Language => "language",
        })
    }
}

/// Sort key placing vision layers before language layers, then by numeric index.
pub fn layer_order_key(layer_id: &str) -> (Option<Component>, u64, String) {
    let component = Component::from_layer_id(layer_id);
    let index = layer_id
        .rsplit('.')
        .next()
        .and_then(|s| s.parse().ok())
        .unwrap_or(u64::MAX);
    (component, index, layer_id.to_string())
}

/// Pooled hidden states of one layer: row `i` belongs to manifest record `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub layer_id: String,
    pub component: Component,
    pub data: Matrix<f32>,
}

impl ActivationMatrix {
    pub fn new(layer_id: impl Into<String>, data: Matrix<f32>) -> Result<Self> {
        let layer_id = layer_id.into();
        let component = Component::from_layer_id(&layer_id).ok_or_else(|| {
            Error::invalid(format!(
                "layer id {layer_id:?} must start with \"vit.\" or \"llm.\""
            ))
        })?;
        if data.ncols() == 0 {
            return Err(Error::invalid(format!("layer {layer_id} has zero width")));
        }
        if let Some((row, col)) = data.first_non_finite() {
            return Err(Error::NonFinite { row, col });
        }
        Ok(ActivationMatrix {
            layer_id,
            component,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    /// Conventional file name, e.g. `llm.31.actv`.
    pub fn file_name(&self) -> String {
        format!("{}.{ACTIVATION_EXTENSION}", self.layer_id)
    }
}

pub fn write_activation_file(matrix: &ActivationMatrix, path: &Path) -> Result<()> {
    format::write_matrix(path, &matrix.data)
}

/// Reads an ACTV1 file; the layer id is taken from the file stem.
pub fn read_activation_file(path: &Path) -> Result<ActivationMatrix> {
    let data = format::read_matrix(path)?;
    let layer_id = path
        .file_name()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_suffix(&format!(".{ACTIVATION_EXTENSION}")))
        .ok_or_else(|| Error::format(path, "file name must end in .actv"))?;
    ActivationMatrix::new(layer_id, data).map_err(|e| Error::format(path, e.to_string()))
}

/// A manifest plus every layer dump of one run, rows aligned.
#[derive(Debug, Clone)]
pub struct ActivationStore {
    pub manifest: SampleManifest,
    /// Vision layers first, then language layers, each by ascending index.
    pub layers: Vec<ActivationMatrix>,
}

impl ActivationStore {
    pub fn new(manifest: SampleManifest, mut layers: Vec<ActivationMatrix>) -> Result<Self> {
        let n = manifest.len();
        for l in &layers {
            if l.n() != n {
                return Err(Error::invalid(format!(
                    "layer {} has {} rows but the manifest lists {n} samples",
                    l.layer_id,
                    l.n()
                )));
            }
        }
        layers.sort_by_key(|l| layer_order_key(&l.layer_id));
        for w in layers.windows(2) {
            if w[0].layer_id == w[1].layer_id {
                return Err(Error::invalid(format!("duplicate layer {}", w[0].layer_id)));
            }
        }
        Ok(ActivationStore { manifest, layers })
    }

    /// Loads `manifest.json` and every `*.actv` file in `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = SampleManifest::load(&dir.join(MANIFEST_FILE))?;
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == ACTIVATION_EXTENSION))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::format(dir, "no .actv files found"));
        }
        let layers = paths
            .iter()
            .map(|p| read_activation_file(p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest, layers).map_err(|e| Error::format(dir, e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.manifest.save(&dir.join(MANIFEST_FILE))?;
        for l in &self.layers {
            write_activation_file(l, &dir.join(l.file_name()))?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.manifest.len()
    }

    pub fn layer(&self, layer_id: &str) -> Option<&ActivationMatrix> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    pub fn ci(&self) -> Vec<f64> {
        self.manifest.records.iter().map(|r| r.ci_score).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn zeros_file_size() {
        let dir = tmp();
        let path = dir.path().join("llm.0.actv");
        let m = ActivationMatrix::new("llm.0", Matrix::zeros(2, 3)).unwrap();
        write_activation_file(&m, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 32 + 24);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tmp();
        let path = dir.path().join("vit.13.actv");
        let data = Matrix::from_fn(4, 5, |i, j| (i as f32 - 1.7) * (j as f32 + 0.1) * 1e-3);
        let m = ActivationMatrix::new("vit.13", data).unwrap();
        write_activation_file(&m, &path).unwrap();
        let back = read_activation_file(&path).unwrap();
        assert_eq!(back.layer_id, "vit.13");
        assert_eq!(back.component, Component::Vision);
        let bits = |m: &ActivationMatrix| m.data.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn nan_write_names_position() {
        let dir = tmp();
        let mut data = Matrix::<f32>::zeros(2, 3);
        data.set(0, 1, f32::NAN);
        let m = ActivationMatrix {
            layer_id: "llm.1".into(),
            component: Component::Language,
            data,
        };
        let err = write_activation_file(&m, &dir.path().join("llm.1.actv")).unwrap_err();
        assert!(err.to_string().contains("(0,1)"), "{err}");
        assert!(!dir.path().join("llm.1.actv").exists());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tmp();
        let path = dir.path().join("llm.0.actv");
        let mut bytes = format::encode_header(1, 1).to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes[0..4].copy_from_slice(b"XXXX");
        fs::write(&path, &bytes).unwrap();
        let err = read_activation_file(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tmp();
        let path = dir.path().join("llm.0.actv");
        let mut bytes = format::encode_header(1, 1).to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes[4] = 2;
        fs::write(&path, &bytes).unwrap();
        assert!(read_activation_file(&path).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tmp();
        let path = dir.path().join("llm.0.actv");
        let m = ActivationMatrix::new("llm.0", Matrix::from_fn(3, 2, |i, j| (i + j) as f32)).unwrap();
        write_activation_file(&m, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        let err = read_activation_file(&path).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");

        let mut long = bytes.clone();
        long.extend_from_slice(&[0, 0, 0, 0]);
        fs::write(&path, &long).unwrap();
        assert!(read_activation_file(&path).unwrap_err().to_string().contains("mismatch"));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let dir = tmp();
        let path = dir.path().join("llm.0.actv");
        let mut bytes = format::encode_header(1, 2).to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = read_activation_file(&path).unwrap_err().to_string();
        assert!(err.contains("(0,1)") && err.contains("byte offset 36"), "{err}");
    }

    #[test]
    fn full_size_test_split_reads_back() {
        let dir = tmp();
        let path = dir.path().join("llm.31.actv");
        let m = ActivationMatrix::new("llm.31", Matrix::zeros(600, 4096)).unwrap();
        write_activation_file(&m, &path).unwrap();
        assert_eq!(read_activation_file(&path).unwrap().data.shape(), (600, 4096));
    }

    #[test]
    fn layer_ids_validated() {
        assert!(ActivationMatrix::new("foo.1", Matrix::zeros(1, 1)).is_err());
        assert!(ActivationMatrix::new("llm.1", Matrix::zeros(1, 0)).is_err());
    }

    #[test]
    fn layers_ordered_vision_first_numerically() {
        let mut ids = vec!["llm.10", "vit.2", "llm.2", "vit.10", "llm.0"];
        ids.sort_by_key(|s| layer_order_key(s));
        assert_eq!(ids, ["vit.2", "vit.10", "llm.0", "llm.2", "llm.10"]);
    }

    #[test]
    fn store_round_trip() {
        let dir = tmp();
        let ci = vec![0.1, 0.2, 0.5, 0.9];
        let manifest = SampleManifest::from_scores(&ci, 5, 1).unwrap();
        let layers = vec![
            ActivationMatrix::new("llm.1", Matrix::from_fn(4, 2, |i, j| (i * 2 + j) as f32)).unwrap(),
            ActivationMatrix::new("vit.0", Matrix::from_fn(4, 3, |i, j| (i + j) as f32)).unwrap(),
        ];
        let store = ActivationStore::new(manifest, layers).unwrap();
        assert_eq!(store.layers[0].layer_id, "vit.0");
        store.write(dir.path()).unwrap();
        let back = ActivationStore::load(dir.path()).unwrap();
        assert_eq!(back.layers, store.layers);
        assert_eq!(back.manifest, store.manifest);
    }

    #[test]
    fn store_rejects_row_mismatch() {
        let manifest = SampleManifest::from_scores(&[0.1, 0.2, 0.3], 5, 1).unwrap();
        let layers = vec![ActivationMatrix::new("llm.1", Matrix::zeros(2, 2)).unwrap()];
        assert!(ActivationStore::new(manifest, layers).is_err());
    }
}
