//! The declarative run configuration: one JSON file naming the input store,
//! the output directory, the stages to run, and one parameter block per stage.
//! Command-line flags override the scalar fields.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use repscope_core::concepts::{ConceptMethod, ConceptParams, SAE_ATOMS_PER_SIDE};
use repscope_core::gdv::GroupingStrategy;
use repscope_core::probe::TrainConfig;
use repscope_core::projections::{ProjectionMethod, ProjectionParams, SmacofConfig, TsneConfig};
use repscope_core::sae::SaeConfig;
use repscope_core::stats::derive_seed;
use repscope_core::store::Split;
use repscope_core::synth::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Pipeline stages in execution order. `sae` runs before `concepts` because
/// the SAE-composed concept vector reads the trained dictionaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Gdv,
    Project,
    Sae,
    Concepts,
    Head,
    Rsa,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Gdv,
        Stage::Project,
        Stage::Sae,
        Stage::Concepts,
        Stage::Head,
        Stage::Rsa,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Gdv => "gdv",
            Stage::Project => "project",
            Stage::Sae => "sae",
            Stage::Concepts => "concepts",
            Stage::Head => "head",
            Stage::Rsa => "rsa",
            Stage::Report => "report",
        }
    }

    /// Fixed index used to derive the stage seed; independent of which
    /// other stages run.
    fn seed_index(self) -> u64 {
        match self {
            Stage::Gdv => 1,
            Stage::Project => 2,
            Stage::Sae => 3,
            Stage::Concepts => 4,
            Stage::Head => 5,
            Stage::Rsa => 6,
            Stage::Report => 7,
        }
    }

    pub fn needs_store(self) -> bool {
        self != Stage::Report
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which manifest rows a stage analyses. Rows marked as duplicates are
/// always excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSelection {
    All,
    Train,
    Val,
    Test,
}

impl SplitSelection {
    pub fn includes(self, split: Split) -> bool {
        match self {
            SplitSelection::All => true,
            SplitSelection::Train => split == Split::Train,
            SplitSelection::Val => split == Split::Val,
            SplitSelection::Test => split == Split::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdvStage {
    /// Empty means every layer.
    pub layers: Vec<String>,
    pub strategies: Vec<GroupingStrategy>,
    pub zscore: bool,
    pub n_perm: usize,
    pub split: SplitSelection,
}

impl Default for GdvStage {
    fn default() -> Self {
        GdvStage {
            layers: Vec::new(),
            strategies: default_strategies(),
            zscore: false,
            n_perm: 1000,
            split: SplitSelection::All,
        }
    }
}

fn default_strategies() -> Vec<GroupingStrategy> {
    vec![
        GroupingStrategy::BinaryMedian,
        GroupingStrategy::TrendTerciles,
        GroupingStrategy::QuintileBins,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectStage {
    pub layers: Vec<String>,
    pub methods: Vec<ProjectionMethod>,
    /// Strategies scored in the projected plane.
    pub strategies: Vec<GroupingStrategy>,
    pub split: SplitSelection,
    pub smacof: SmacofConfig,
    pub tsne: TsneConfig,
}

impl Default for ProjectStage {
    fn default() -> Self {
        ProjectStage {
            layers: Vec::new(),
            methods: ProjectionMethod::ALL.to_vec(),
            strategies: default_strategies(),
            split: SplitSelection::All,
            smacof: SmacofConfig::default(),
            tsne: TsneConfig::default(),
        }
    }
}

impl ProjectStage {
    pub fn params(&self, tsne_seed: u64) -> ProjectionParams {
        ProjectionParams {
            smacof: self.smacof,
            tsne: TsneConfig { seed: tsne_seed, ..self.tsne },
        }
    }
}

/// SAE training on the train split of each layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeStage {
    pub layers: Vec<String>,
    /// `seed` is replaced by a per-layer seed derived from the run seed.
    pub train: SaeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConceptsStage {
    pub layers: Vec<String>,
    pub methods: Vec<ConceptMethod>,
    pub pca_best_max_components: usize,
    /// Logistic penalty; `null` means `1/n`.
    pub probe_l2: Option<f64>,
    pub ridge_lambda: f64,
    pub sae_atoms_per_side: usize,
}

impl Default for ConceptsStage {
    fn default() -> Self {
        let p = ConceptParams::default();
        ConceptsStage {
            layers: Vec::new(),
            methods: p.methods,
            pca_best_max_components: p.pca_best_max_components,
            probe_l2: p.probe_l2,
            ridge_lambda: p.ridge_lambda,
            sae_atoms_per_side: SAE_ATOMS_PER_SIDE,
        }
    }
}

impl ConceptsStage {
    pub fn params(&self) -> ConceptParams {
        ConceptParams {
            methods: self.methods.clone(),
            pca_best_max_components: self.pca_best_max_components,
            probe_l2: self.probe_l2,
            ridge_lambda: self.ridge_lambda,
            sae: SaeConfig::default(),
            sae_atoms_per_side: self.sae_atoms_per_side,
        }
    }

    pub fn uses_sae(&self) -> bool {
        self.methods.contains(&ConceptMethod::SaeComposed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadStage {
    pub layers: Vec<String>,
    /// `seed` is replaced by a per-layer seed derived from the run seed.
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsaStage {
    /// Layer whose embedding and concept projections are compared; `null`
    /// means the last layer of the store.
    pub layer: Option<String>,
    /// Concept methods to include; empty means every method with a saved vector.
    pub methods: Vec<ConceptMethod>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportStage {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads; `null` uses every core. Results do not depend on it.
    pub threads: Option<usize>,
    pub stages: Vec<Stage>,
    pub gdv: GdvStage,
    pub project: ProjectStage,
    pub sae: SaeStage,
    pub concepts: ConceptsStage,
    pub head: HeadStage,
    pub rsa: RsaStage,
    pub report: ReportStage,
    /// Used by the `synth` subcommand only.
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input_dir: None,
            output_dir: None,
            seed: 0,
            threads: None,
            stages: Stage::ALL.to_vec(),
            gdv: GdvStage::default(),
            project: ProjectStage::default(),
            sae: SaeStage::default(),
            concepts: ConceptsStage::default(),
            head: HeadStage::default(),
            rsa: RsaStage::default(),
            report: ReportStage::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses config JSON; `origin` only labels error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            CliError::validation(format!("{}: line {} column {}: {e}", origin.display(), e.line(), e.column()))
        })
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.seed, stage.seed_index())
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| CliError::validation("no output directory: set output_dir or pass --out"))
    }

    pub fn input_dir(&self) -> Result<&Path> {
        self.input_dir
            .as_deref()
            .ok_or_else(|| CliError::validation("no input directory: set input_dir or pass --input"))
    }

    /// Requested stages in execution order.
    pub fn ordered_stages(&self) -> Vec<Stage> {
        let mut stages = self.stages.clone();
        stages.sort();
        stages
    }

    /// Checks everything that can be checked without touching the input:
    /// paths, per-stage knobs, and that every stage's prerequisites are
    /// scheduled in the same run.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(CliError::validation("no stages requested"));
        }
        let mut seen = Vec::new();
        for s in &self.stages {
            if seen.contains(s) {
                return Err(CliError::validation(format!("stage {s} listed twice")));
            }
            seen.push(*s);
        }
        self.output_dir()?;
        if self.stages.iter().any(|s| s.needs_store()) {
            self.input_dir()?;
        }
        if self.threads == Some(0) {
            return Err(CliError::validation("threads must be at least 1"));
        }
        for &stage in &self.stages {
            self.validate_stage(stage)?;
            for dep in self.dependencies(stage) {
                if !self.stages.contains(&dep) {
                    return Err(CliError::validation(format!(
                        "stage {stage} requires stage {dep}{}",
                        if stage == Stage::Concepts { " (sae_composed is enabled)" } else { "" }
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stages whose artifacts `stage` reads.
    pub fn dependencies(&self, stage: Stage) -> Vec<Stage> {
        match stage {
            Stage::Concepts if self.concepts.uses_sae() => vec![Stage::Sae],
            Stage::Rsa => vec![Stage::Concepts],
            _ => Vec::new(),
        }
    }

    /// Knob checks for one stage.
    pub fn validate_stage(&self, stage: Stage) -> Result<()> {
        let no_custom = |strategies: &[GroupingStrategy], what: &str| {
            if strategies.is_empty() {
                return Err(CliError::validation(format!("{what}: no grouping strategies")));
            }
            if strategies.contains(&GroupingStrategy::Custom) {
                return Err(CliError::validation(format!(
                    "{what}: the custom strategy needs explicit labels and cannot be configured"
                )));
            }
            Ok(())
        };
        match stage {
            Stage::Gdv => {
                no_custom(&self.gdv.strategies, "gdv")?;
                if self.gdv.n_perm == 0 {
                    return Err(CliError::validation("gdv: n_perm must be at least 1"));
                }
            }
            Stage::Project => {
                no_custom(&self.project.strategies, "project")?;
                if self.project.methods.is_empty() {
                    return Err(CliError::validation("project: no projection methods"));
                }
            }
            Stage::Concepts => {
                if self.concepts.methods.is_empty() {
                    return Err(CliError::validation("concepts: no concept methods"));
                }
                if !(self.concepts.ridge_lambda >= 0.0) {
                    return Err(CliError::validation("concepts: ridge_lambda must be nonnegative"));
                }
            }
            Stage::Sae => {
                if self.sae.train.k == 0 || self.sae.train.epochs == 0 {
                    return Err(CliError::validation("sae: k and epochs must be positive"));
                }
            }
            Stage::Head | Stage::Rsa | Stage::Report => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_paths(mut cfg: RunConfig) -> RunConfig {
        cfg.input_dir = Some("in".into());
        cfg.output_dir = Some("out".into());
        cfg
    }

    #[test]
    fn default_config_is_valid_and_ordered() {
        let cfg = with_paths(RunConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.ordered_stages(), Stage::ALL.to_vec());
    }

    #[test]
    fn rsa_without_concepts_is_rejected() {
        let cfg = with_paths(RunConfig {
            stages: vec![Stage::Gdv, Stage::Rsa],
            ..Default::default()
        });
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("rsa requires stage concepts"), "{err}");
    }

    #[test]
    fn sae_composed_needs_sae_stage() {
        let mut cfg = with_paths(RunConfig {
            stages: vec![Stage::Concepts],
            ..Default::default()
        });
        assert!(cfg.validate().is_err());
        cfg.concepts.methods.retain(|m| *m != ConceptMethod::SaeComposed);
        cfg.validate().unwrap();
    }

    #[test]
    fn stages_run_in_dependency_order() {
        let cfg = with_paths(RunConfig {
            stages: vec![Stage::Report, Stage::Concepts, Stage::Sae],
            ..Default::default()
        });
        cfg.validate().unwrap();
        assert_eq!(cfg.ordered_stages(), vec![Stage::Sae, Stage::Concepts, Stage::Report]);
    }

    #[test]
    fn malformed_config_reports_position() {
        let err = RunConfig::parse("{\n  \"seed\": 1,\n  \"stagez\": []\n}", Path::new("cfg.json")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("cfg.json: line 3"), "{msg}");
        assert_eq!(err.exit_code(), crate::error::EXIT_VALIDATION);
    }

    #[test]
    fn partial_blocks_keep_defaults() {
        let cfg = RunConfig::parse(r#"{"gdv": {"n_perm": 10}, "sae": {"train": {"k": 4}}}"#, Path::new("c")).unwrap();
        assert_eq!(cfg.gdv.n_perm, 10);
        assert_eq!(cfg.gdv.strategies.len(), 3);
        assert_eq!(cfg.sae.train.k, 4);
        assert_eq!(cfg.sae.train.epochs, SaeConfig::default().epochs);
    }

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        let cfg = RunConfig::default();
        let seeds: Vec<u64> = Stage::ALL.iter().map(|s| cfg.stage_seed(*s)).collect();
        let mut unique = seeds.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), seeds.len());
        assert_eq!(seeds, Stage::ALL.iter().map(|s| cfg.stage_seed(*s)).collect::<Vec<_>>());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = with_paths(RunConfig::default());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&text, Path::new("x")).unwrap(), cfg);
    }
}
