use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sampling::{make_split, quantile_edges, SPLIT_FRACTIONS};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(rename = "id")]
    pub sample_id: String,
    #[serde(rename = "ci")]
    pub ci_score: f64,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
}

/// Per-sample metadata, in activation row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub seed: u64,
    /// Interior edges of the CI stratification bins.
    pub bin_edges: Vec<f64>,
    #[serde(rename = "samples")]
    pub records: Vec<SampleRecord>,
}

impl SampleManifest {
    pub fn new(seed: u64, bin_edges: Vec<f64>, records: Vec<SampleRecord>) -> Result<Self> {
        let m = SampleManifest {
            seed,
            bin_edges,
            records,
        };
        m.validate()?;
        Ok(m)
    }

    /// Builds a manifest with ids `s00000, s00001, ...` and a stratified 70/15/15 split.
    pub fn from_scores(ci: &[f64], n_bins: usize, seed: u64) -> Result<Self> {
        let splits = make_split(ci, SPLIT_FRACTIONS, n_bins, seed)?;
        let width = ci.len().saturating_sub(1).to_string().len().max(5);
        let records = ci
            .iter()
            .zip(splits)
            .enumerate()
            .map(|(i, (&ci_score, split))| SampleRecord {
                sample_id: format!("s{i:0width$}"),
                ci_score,
                split,
                duplicate_of: None,
            })
            .collect();
        Self::new(seed, quantile_edges(ci, n_bins), records)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            if !(0.0..=1.0).contains(&r.ci_score) {
                return Err(Error::invalid(format!(
                    "sample {i} ({}) has CI score {} outside [0,1]",
                    r.sample_id, r.ci_score
                )));
            }
            if let Some(dup) = &r.duplicate_of {
                if !seen.contains(dup.as_str()) {
                    return Err(Error::invalid(format!(
                        "sample {i} ({}) is marked duplicate_of {dup:?}, which is not an earlier record",
                        r.sample_id
                    )));
                }
            }
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::invalid(format!("duplicate sample id {:?}", r.sample_id)));
            }
        }
        if self.bin_edges.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("bin edges must be non-decreasing"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: SampleManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        m.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.sample_id.clone()).collect()
    }

    /// Row indices assigned to `split`, ascending.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}
