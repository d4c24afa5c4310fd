//! Pipeline stages. Each stage reads the activation store and, where it
//! depends on another stage, that stage's artifact files, so any stage can be
//! rerun on its own against an existing output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use repscope_core::concepts::{fit_concept, project_onto, tercile_examples, ConceptMethod, ConceptVector};
use repscope_core::gdv::{gdv, permutation_test, GroupLabels, GroupingStrategy};
use repscope_core::probe::{train_regression_head, TrainConfig};
use repscope_core::projections::project;
use repscope_core::rsa::{rsa_grid, Space, SpaceData};
use repscope_core::sae::{reconstruction_r2, sae_train, SaeConfig};
use repscope_core::stats::{derive_seed, pearson, regression_metrics, zscore_columns};
use repscope_core::store::{ActivationMatrix, ActivationStore, Split};
use repscope_core::{Matrix, Matrix32, SaeModel32};
use serde::Serialize;

use crate::config::{RunConfig, SplitSelection, Stage};
use crate::error::{CliError, Result};
use crate::report::render_figures;
use crate::table::{fmt_float, Table};

pub const GDV_CSV: &str = "gdv.csv";
pub const GDV_PERMUTATION_CSV: &str = "gdv_permutation.csv";
pub const PROJECTIONS_DIR: &str = "projections";
pub const PROJECTION_GDV_CSV: &str = "projection_gdv.csv";
pub const PROJECTION_DIAGNOSTICS_CSV: &str = "projection_diagnostics.csv";
pub const SAE_DIR: &str = "sae";
pub const SAE_LOG_CSV: &str = "sae/training_log.csv";
pub const SAE_SUMMARY_CSV: &str = "sae/summary.csv";
pub const CONCEPTS_DIR: &str = "concepts";
pub const CONCEPT_CORRELATIONS_CSV: &str = "concept_correlations.csv";
pub const CONCEPT_PROJECTIONS_CSV: &str = "concepts/test_projections.csv";
pub const CONCEPT_TERCILES_CSV: &str = "concepts/terciles.csv";
pub const HEAD_DIR: &str = "head";
pub const HEAD_METRICS_CSV: &str = "head_metrics.csv";
pub const HEAD_LOG_CSV: &str = "head/training_log.csv";
pub const RSA_GRID_CSV: &str = "rsa_grid.csv";
pub const PROJECTION_CORRELATIONS_CSV: &str = "projection_correlations.csv";
pub const FIGURES_DIR: &str = "figures";
pub const RUN_JSON: &str = "run.json";

/// Strategies whose labels are written next to every projection.
pub const LABEL_STRATEGIES: [GroupingStrategy; 3] = [
    GroupingStrategy::BinaryMedian,
    GroupingStrategy::TrendTerciles,
    GroupingStrategy::QuintileBins,
];

pub fn sae_path(out: &Path, layer_id: &str) -> PathBuf {
    out.join(SAE_DIR).join(format!("{layer_id}.sae"))
}

pub fn concept_path(out: &Path, layer_id: &str, method: ConceptMethod) -> PathBuf {
    out.join(CONCEPTS_DIR).join(format!("{layer_id}.{}.json", method.as_str()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Non-duplicate rows of the requested split, in manifest order.
pub fn select_rows(store: &ActivationStore, selection: SplitSelection) -> Vec<usize> {
    store
        .manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.duplicate_of.is_none() && selection.includes(r.split))
        .map(|(i, _)| i)
        .collect()
}

fn split_rows(store: &ActivationStore, split: Split) -> Vec<usize> {
    select_rows(
        store,
        match split {
            Split::Train => SplitSelection::Train,
            Split::Val => SplitSelection::Val,
            Split::Test => SplitSelection::Test,
        },
    )
}

/// Layers named in `ids` (all layers when empty) with their position in the
/// store, which keys per-layer seeds.
pub fn select_layers<'a>(store: &'a ActivationStore, ids: &[String]) -> Result<Vec<(usize, &'a ActivationMatrix)>> {
    if ids.is_empty() {
        return Ok(store.layers.iter().enumerate().collect());
    }
    let mut chosen: Vec<(usize, &ActivationMatrix)> = ids
        .iter()
        .map(|id| {
            store
                .layers
                .iter()
                .position(|l| &l.layer_id == id)
                .map(|p| (p, &store.layers[p]))
                .ok_or_else(|| CliError::validation(format!("unknown layer {id}")))
        })
        .collect::<Result<_>>()?;
    chosen.sort_by_key(|(p, _)| *p);
    chosen.dedup_by_key(|(p, _)| *p);
    Ok(chosen)
}

fn scores(store: &ActivationStore, rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| store.manifest.records[i].ci_score).collect()
}

fn ids(store: &ActivationStore, rows: &[usize]) -> Vec<String> {
    rows.iter().map(|&i| store.manifest.records[i].sample_id.clone()).collect()
}

fn require_rows(rows: &[usize], min: usize, what: &str) -> Result<()> {
    if rows.len() < min {
        return Err(CliError::validation(format!(
            "{what} has {} usable samples; at least {min} are needed",
            rows.len()
        )));
    }
    Ok(())
}

pub fn load_store(cfg: &RunConfig) -> Result<ActivationStore> {
    let dir = cfg.input_dir()?;
    info!("loading activation store from {}", dir.display());
    let store = ActivationStore::load(dir)?;
    info!("{} samples, {} layers", store.n(), store.layers.len());
    Ok(store)
}

/// Layerwise GDV for every configured strategy, each with a permutation test.
pub fn stage_gdv(cfg: &RunConfig, store: &ActivationStore) -> Result<()> {
    let out = cfg.output_dir()?;
    let sc = &cfg.gdv;
    let seed = cfg.stage_seed(Stage::Gdv);
    let rows = select_rows(store, sc.split);
    require_rows(&rows, 2, "gdv selection")?;
    let ci = scores(store, &rows);
    let labels: Vec<GroupLabels> = sc.strategies.iter().map(|s| s.label(&ci)).collect::<repscope_core::Result<_>>()?;
    let layers = select_layers(store, &sc.layers)?;
    let n_strategies = sc.strategies.len() as u64;

    let jobs: Vec<(usize, &ActivationMatrix, usize)> = layers
        .iter()
        .flat_map(|&(pos, layer)| (0..labels.len()).map(move |s| (pos, layer, s)))
        .collect();
    info!("gdv: {} layers x {} strategies, {} permutations each", layers.len(), labels.len(), sc.n_perm);
    let results = jobs
        .par_iter()
        .map(|&(pos, layer, s)| {
            let raw = layer.data.select_rows(&rows);
            let points = if sc.zscore { zscore_columns(&raw) } else { raw };
            let report = gdv(&points, &labels[s], false)?;
            let perm = permutation_test(&points, &labels[s], sc.n_perm, derive_seed(seed, pos as u64 * n_strategies + s as u64))?;
            Ok((report, perm))
        })
        .collect::<repscope_core::Result<Vec<_>>>()?;

    let mut summary = Table::new(&["layer_id", "component", "strategy", "gdv", "p_value", "n_perm"]);
    let mut nulls = Table::new(&["layer_id", "strategy", "trial", "null_gdv"]);
    for (&(_, layer, s), (report, perm)) in jobs.iter().zip(&results) {
        let strategy = sc.strategies[s].as_str();
        summary.push(vec![
            layer.layer_id.clone(),
            layer.component.to_string(),
            strategy.to_string(),
            fmt_float(report.gdv),
            fmt_float(perm.p_value),
            sc.n_perm.to_string(),
        ]);
        for (t, v) in perm.null_values.iter().enumerate() {
            nulls.push(vec![layer.layer_id.clone(), strategy.to_string(), t.to_string(), fmt_float(*v)]);
        }
    }
    summary.write(&out.join(GDV_CSV))?;
    nulls.write(&out.join(GDV_PERMUTATION_CSV))
}

/// 2-D projections per layer and method, with GDV before and after projecting.
pub fn stage_project(cfg: &RunConfig, store: &ActivationStore) -> Result<()> {
    let out = cfg.output_dir()?;
    let sc = &cfg.project;
    let seed = cfg.stage_seed(Stage::Project);
    let rows = select_rows(store, sc.split);
    require_rows(&rows, 3, "projection selection")?;
    let ci = scores(store, &rows);
    let sample_ids = ids(store, &rows);
    let label_sets: Vec<GroupLabels> = LABEL_STRATEGIES.iter().map(|s| s.label(&ci)).collect::<repscope_core::Result<_>>()?;
    let scored: Vec<GroupLabels> = sc.strategies.iter().map(|s| s.label(&ci)).collect::<repscope_core::Result<_>>()?;
    let layers = select_layers(store, &sc.layers)?;

    let raw_gdv = layers
        .par_iter()
        .map(|&(_, layer)| {
            let points = layer.data.select_rows(&rows);
            scored.iter().map(|l| gdv(&points, l, false).map(|r| r.gdv)).collect::<repscope_core::Result<Vec<f64>>>()
        })
        .collect::<repscope_core::Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..layers.len())
        .flat_map(|l| (0..sc.methods.len()).map(move |m| (l, m)))
        .collect();
    info!("project: {} layers x {} methods on {} samples", layers.len(), sc.methods.len(), rows.len());
    let results = jobs
        .par_iter()
        .map(|&(l, m)| {
            let (pos, layer) = layers[l];
            let points = layer.data.select_rows(&rows);
            let params = sc.params(derive_seed(seed, pos as u64));
            let projection = project(&points, sc.methods[m], &params)?;
            let projected = scored
                .iter()
                .map(|lab| gdv(&projection.coords, lab, false).map(|r| r.gdv))
                .collect::<repscope_core::Result<Vec<f64>>>()?;
            Ok((projection, projected))
        })
        .collect::<repscope_core::Result<Vec<_>>>()?;

    let dir = out.join(PROJECTIONS_DIR);
    create_dir(&dir)?;
    let mut gdv_table = Table::new(&["layer_id", "method", "strategy", "gdv_raw", "gdv_projected"]);
    let mut diag_table = Table::new(&["layer_id", "method", "key", "value"]);
    let mut header = vec!["sample_id", "x", "y", "ci"];
    header.extend(LABEL_STRATEGIES.iter().map(|s| s.as_str()));
    for (&(l, m), (projection, projected)) in jobs.iter().zip(&results) {
        let layer = layers[l].1;
        let method = sc.methods[m].as_str();
        let mut coords = Table::new(&header);
        for (i, id) in sample_ids.iter().enumerate() {
            let mut row = vec![
                id.clone(),
                fmt_float(f64::from(projection.coords.get(i, 0))),
                fmt_float(f64::from(projection.coords.get(i, 1))),
                fmt_float(ci[i]),
            ];
            row.extend(label_sets.iter().map(|lab| lab.labels()[i].to_string()));
            coords.push(row);
        }
        coords.write(&dir.join(format!("{}.{method}.csv", layer.layer_id)))?;
        for (s, strategy) in sc.strategies.iter().enumerate() {
            gdv_table.push(vec![
                layer.layer_id.clone(),
                method.to_string(),
                strategy.as_str().to_string(),
                fmt_float(raw_gdv[l][s]),
                fmt_float(projected[s]),
            ]);
        }
        for (key, value) in &projection.diagnostics {
            diag_table.push(vec![layer.layer_id.clone(), method.to_string(), key.clone(), fmt_float(*value)]);
        }
    }
    gdv_table.write(&out.join(PROJECTION_GDV_CSV))?;
    diag_table.write(&out.join(PROJECTION_DIAGNOSTICS_CSV))
}

/// Top-K SAE per layer on the train split; reconstruction scored on test.
pub fn stage_sae(cfg: &RunConfig, store: &ActivationStore) -> Result<()> {
    let out = cfg.output_dir()?;
    let sc = &cfg.sae;
    let seed = cfg.stage_seed(Stage::Sae);
    let train = split_rows(store, Split::Train);
    let test = split_rows(store, Split::Test);
    require_rows(&train, 1, "train split")?;
    let layers = select_layers(store, &sc.layers)?;
    info!("sae: {} layers, k = {}, {} epochs", layers.len(), sc.train.k, sc.train.epochs);
    let results = layers
        .par_iter()
        .map(|&(pos, layer)| {
            let train_cfg = SaeConfig { seed: derive_seed(seed, pos as u64), ..sc.train };
            let (model, log) = sae_train(&layer.data.select_rows(&train), &train_cfg)?;
            let r2 = if test.is_empty() {
                f64::NAN
            } else {
                reconstruction_r2(&model, &layer.data.select_rows(&test))?
            };
            Ok((model, log, r2))
        })
        .collect::<repscope_core::Result<Vec<_>>>()?;

    create_dir(&out.join(SAE_DIR))?;
    let mut log_table = Table::new(&["layer_id", "epoch", "loss", "dead_atoms", "decoder_norm_error"]);
    let mut summary = Table::new(&["layer_id", "d_in", "m_dict", "k", "test_r2"]);
    for (&(_, layer), (model, log, r2)) in layers.iter().zip(&results) {
        model.save(&sae_path(out, &layer.layer_id))?;
        for e in log {
            log_table.push(vec![
                layer.layer_id.clone(),
                e.epoch.to_string(),
                fmt_float(e.loss),
                e.dead_atoms.to_string(),
                fmt_float(e.decoder_norm_error),
            ]);
        }
        summary.push(vec![
            layer.layer_id.clone(),
            model.d_in().to_string(),
            model.m_dict().to_string(),
            model.k.to_string(),
            fmt_float(*r2),
        ]);
    }
    log_table.write(&out.join(SAE_LOG_CSV))?;
    summary.write(&out.join(SAE_SUMMARY_CSV))
}

/// Concept vectors fitted on train rows, evaluated on test rows.
pub fn stage_concepts(cfg: &RunConfig, store: &ActivationStore) -> Result<()> {
    let out = cfg.output_dir()?;
    let sc = &cfg.concepts;
    let params = sc.params();
    let train = split_rows(store, Split::Train);
    let test = split_rows(store, Split::Test);
    require_rows(&train, 2, "train split")?;
    require_rows(&test, 3, "test split")?;
    let layers = select_layers(store, &sc.layers)?;
    if sc.uses_sae() {
        if let Some((_, missing)) = layers.iter().find(|(_, l)| !sae_path(out, &l.layer_id).exists()) {
            return Err(CliError::validation(format!(
                "sae_composed needs {}; run the sae stage first",
                sae_path(out, &missing.layer_id).display()
            )));
        }
    }
    let train_ci = scores(store, &train);
    let test_ci = scores(store, &test);
    let test_ids = ids(store, &test);
    info!("concepts: {} layers x {} methods", layers.len(), sc.methods.len());

    let results = layers
        .par_iter()
        .map(|&(_, layer)| {
            let train_x = layer.data.select_rows(&train);
            let test_x = layer.data.select_rows(&test);
            let sae = if sc.uses_sae() {
                Some(SaeModel32::load(&sae_path(out, &layer.layer_id))?)
            } else {
                None
            };
            sc.methods
                .iter()
                .map(|&method| {
                    let vector = fit_concept(method, &train_x, &train_ci, &params, sae.as_ref())?.with_layer(&layer.layer_id);
                    let proj = project_onto(&vector, &test_x)?;
                    let r = pearson(&proj, &test_ci)?.r;
                    let terciles = tercile_examples(&proj, &test_ids)?;
                    Ok((vector, proj, r, terciles))
                })
                .collect::<repscope_core::Result<Vec<_>>>()
        })
        .collect::<repscope_core::Result<Vec<_>>>()?;

    create_dir(&out.join(CONCEPTS_DIR))?;
    let mut curve = Table::new(&["layer", "method", "r_test", "n_test"]);
    let mut projections = Table::new(&["layer", "method", "sample_id", "ci", "projection"]);
    let mut terciles = Table::new(&["layer", "method", "tercile", "rank", "sample_id"]);
    for (&(_, layer), per_method) in layers.iter().zip(&results) {
        for (vector, proj, r, t) in per_method {
            let method = vector.method.as_str();
            vector.save(&concept_path(out, &layer.layer_id, vector.method))?;
            curve.push(vec![layer.layer_id.clone(), method.to_string(), fmt_float(*r), test.len().to_string()]);
            for ((id, c), p) in test_ids.iter().zip(&test_ci).zip(proj) {
                projections.push(vec![layer.layer_id.clone(), method.to_string(), id.clone(), fmt_float(*c), fmt_float(*p)]);
            }
            for (name, members) in [("top", &t.top), ("middle", &t.middle), ("bottom", &t.bottom)] {
                for (rank, id) in members.iter().enumerate() {
                    terciles.push(vec![layer.layer_id.clone(), method.to_string(), name.to_string(), rank.to_string(), id.clone()]);
                }
            }
        }
    }
    curve.write(&out.join(CONCEPT_CORRELATIONS_CSV))?;
    projections.write(&out.join(CONCEPT_PROJECTIONS_CSV))?;
    terciles.write(&out.join(CONCEPT_TERCILES_CSV))
}

/// Huber regression head per layer: train split, early stopping on val,
/// metrics on val and test.
pub fn stage_head(cfg: &RunConfig, store: &ActivationStore) -> Result<()> {
    let out = cfg.output_dir()?;
    let sc = &cfg.head;
    let seed = cfg.stage_seed(Stage::Head);
    let train = split_rows(store, Split::Train);
    let val = split_rows(store, Split::Val);
    let test = split_rows(store, Split::Test);
    require_rows(&train, 1, "train split")?;
    require_rows(&val, 2, "validation split")?;
    let (train_y, val_y, test_y) = (scores(store, &train), scores(store, &val), scores(store, &test));
    let layers = select_layers(store, &sc.layers)?;
    info!("head: {} layers, up to {} epochs", layers.len(), sc.train.max_epochs);

    let results = layers
        .par_iter()
        .map(|&(pos, layer)| {
            let train_cfg = TrainConfig { seed: derive_seed(seed, pos as u64), ..sc.train };
            let val_x = layer.data.select_rows(&val);
            let (model, log) = train_regression_head((&layer.data.select_rows(&train), &train_y), (&val_x, &val_y), &train_cfg)?;
            let val_metrics = regression_metrics(&model.predict(&val_x)?, &val_y)?;
            let test_metrics = if test.len() >= 2 {
                Some(regression_metrics(&model.predict(&layer.data.select_rows(&test))?, &test_y)?)
            } else {
                None
            };
            Ok((model, log, val_metrics, test_metrics))
        })
        .collect::<repscope_core::Result<Vec<_>>>()?;

    create_dir(&out.join(HEAD_DIR))?;
    let mut metrics = Table::new(&[
        "layer_id",
        "component",
        "split",
        "rmse",
        "mae",
        "r2",
        "pearson_r",
        "spearman_rho",
        "best_epoch",
        "epochs_run",
    ]);
    let mut log_table = Table::new(&["layer_id", "epoch", "train_loss", "val_loss", "lr"]);
    for (&(_, layer), (model, log, val_m, test_m)) in layers.iter().zip(&results) {
        model.save(&out.join(HEAD_DIR).join(format!("{}.json", layer.layer_id)))?;
        for (split, m) in [("val", Some(val_m)), ("test", test_m.as_ref())] {
            let Some(m) = m else { continue };
            metrics.push(vec![
                layer.layer_id.clone(),
                layer.component.to_string(),
                split.to_string(),
                fmt_float(m.rmse),
                fmt_float(m.mae),
                fmt_float(m.r2),
                fmt_float(m.pearson_r),
                fmt_float(m.spearman_rho),
                log.best_epoch.to_string(),
                log.epochs.len().to_string(),
            ]);
        }
        for e in &log.epochs {
            log_table.push(vec![
                layer.layer_id.clone(),
                e.epoch.to_string(),
                fmt_float(e.train_loss),
                fmt_float(e.val_loss),
                fmt_float(e.lr),
            ]);
        }
    }
    metrics.write(&out.join(HEAD_METRICS_CSV))?;
    log_table.write(&out.join(HEAD_LOG_CSV))
}

/// RSA between one layer's embedding, the scores, and each saved concept
/// projection on the test split; plus plain correlations of the projections.
pub fn stage_rsa(cfg: &RunConfig, store: &ActivationStore) -> Result<()> {
    let out = cfg.output_dir()?;
    let sc = &cfg.rsa;
    let layer = match &sc.layer {
        Some(id) => store.layer(id).ok_or_else(|| CliError::validation(format!("unknown layer {id}")))?,
        None => store.layers.last().ok_or_else(|| CliError::validation("store has no layers"))?,
    };
    let methods: Vec<ConceptMethod> = if sc.methods.is_empty() {
        ConceptMethod::ALL
            .into_iter()
            .filter(|m| concept_path(out, &layer.layer_id, *m).exists())
            .collect()
    } else {
        sc.methods.clone()
    };
    if methods.is_empty() {
        return Err(CliError::validation(format!(
            "no concept vectors for layer {} under {}; run the concepts stage first",
            layer.layer_id,
            out.join(CONCEPTS_DIR).display()
        )));
    }
    let vectors = methods
        .iter()
        .map(|m| {
            let path = concept_path(out, &layer.layer_id, *m);
            if !path.exists() {
                return Err(CliError::validation(format!("{} not found; run the concepts stage first", path.display())));
            }
            Ok(ConceptVector::<f32>::load(&path)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let test = split_rows(store, Split::Test);
    require_rows(&test, 3, "test split")?;
    let test_x: Matrix32 = layer.data.select_rows(&test);
    let ci = scores(store, &test);
    let sample_ids = ids(store, &test);
    let projections: Vec<Vec<f64>> = vectors.iter().map(|v| project_onto(v, &test_x)).collect::<repscope_core::Result<_>>()?;
    info!("rsa: layer {}, {} concept spaces", layer.layer_id, vectors.len());

    let mut spaces = vec![
        Space { tag: "embedding", ids: &sample_ids, data: SpaceData::Matrix(&test_x) },
        Space { tag: "ci", ids: &sample_ids, data: SpaceData::Scalars(&ci) },
    ];
    for (m, p) in methods.iter().zip(&projections) {
        spaces.push(Space { tag: m.as_str(), ids: &sample_ids, data: SpaceData::Scalars(p) });
    }
    let grid = rsa_grid(&spaces)?;
    write_square(&out.join(RSA_GRID_CSV), &grid.tags, |i, j| grid.values.get(i, j))?;

    let mut scalar_tags = vec!["ci".to_string()];
    scalar_tags.extend(methods.iter().map(|m| m.as_str().to_string()));
    let mut scalar_spaces: Vec<&[f64]> = vec![&ci];
    scalar_spaces.extend(projections.iter().map(Vec::as_slice));
    let k = scalar_spaces.len();
    let mut corr = Matrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let r = if i == j { 1.0 } else { pearson(scalar_spaces[i], scalar_spaces[j])?.r };
            corr.set(i, j, r);
        }
    }
    write_square(&out.join(PROJECTION_CORRELATIONS_CSV), &scalar_tags, |i, j| corr.get(i, j))
}

fn write_square(path: &Path, tags: &[String], value: impl Fn(usize, usize) -> f64) -> Result<()> {
    let mut header = vec!["space"];
    header.extend(tags.iter().map(String::as_str));
    let mut t = Table::new(&header);
    for (i, tag) in tags.iter().enumerate() {
        let mut row = vec![tag.clone()];
        row.extend((0..tags.len()).map(|j| fmt_float(value(i, j))));
        t.push(row);
    }
    t.write(path)
}

pub fn stage_report(cfg: &RunConfig) -> Result<()> {
    let written = render_figures(cfg.output_dir()?)?;
    info!("report: {} figures", written.len());
    Ok(())
}

/// Runs one stage against an already-loaded store (`None` only for `report`).
pub fn run_stage(stage: Stage, cfg: &RunConfig, store: Option<&ActivationStore>) -> Result<()> {
    cfg.validate_stage(stage)?;
    create_dir(cfg.output_dir()?)?;
    let store = || store.ok_or_else(|| CliError::validation(format!("stage {stage} needs an activation store")));
    match stage {
        Stage::Gdv => stage_gdv(cfg, store()?),
        Stage::Project => stage_project(cfg, store()?),
        Stage::Sae => stage_sae(cfg, store()?),
        Stage::Concepts => stage_concepts(cfg, store()?),
        Stage::Head => stage_head(cfg, store()?),
        Stage::Rsa => stage_rsa(cfg, store()?),
        Stage::Report => stage_report(cfg),
    }
}

#[derive(Debug, Serialize)]
struct LayerInfo<'a> {
    id: &'a str,
    component: String,
    d: usize,
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    stages: Vec<Stage>,
    /// Stage seeds; per-layer seeds are `derive_seed(stage_seed, layer_position)`.
    seeds: BTreeMap<&'static str, u64>,
    n_samples: Option<usize>,
    manifest_seed: Option<u64>,
    layers: Vec<LayerInfo<'a>>,
}

/// Validates the whole config, then runs the requested stages in order and
/// records the run in `run.json`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let stages = cfg.ordered_stages();
    let out = cfg.output_dir()?;
    let store = if stages.iter().any(|s| s.needs_store()) {
        Some(load_store(cfg)?)
    } else {
        None
    };
    create_dir(out)?;
    for &stage in &stages {
        info!("stage {stage}");
        run_stage(stage, cfg, store.as_ref())?;
    }
    if !stages.contains(&Stage::Report) {
        warn!("report stage not requested; no figures rendered");
    }
    let record = RunRecord {
        tool: "repscope",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        stages: stages.clone(),
        seeds: std::iter::once(("run", cfg.seed))
            .chain(Stage::ALL.iter().map(|s| (s.as_str(), cfg.stage_seed(*s))))
            .collect(),
        n_samples: store.as_ref().map(ActivationStore::n),
        manifest_seed: store.as_ref().map(|s| s.manifest.seed),
        layers: store
            .as_ref()
            .map(|s| {
                s.layers
                    .iter()
                    .map(|l| LayerInfo { id: &l.layer_id, component: l.component.to_string(), d: l.d() })
                    .collect()
            })
            .unwrap_or_default(),
    };
    let path = out.join(RUN_JSON);
    let text = serde_json::to_string_pretty(&record).expect("run record serializes") + "\n";
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use repscope_core::synth::{generate_synthetic, SynthSpec};

    fn small_store() -> ActivationStore {
        generate_synthetic(&SynthSpec {
            n: 120,
            vision_layers: 1,
            language_layers: 1,
            d_vision: 8,
            d_language: 8,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn duplicates_are_excluded_from_every_selection() {
        let mut store = small_store();
        let dup_id = store.manifest.records[0].sample_id.clone();
        store.manifest.records[5].duplicate_of = Some(dup_id);
        let all = select_rows(&store, SplitSelection::All);
        assert_eq!(all.len(), 119);
        assert!(!all.contains(&5));
        let parts: usize = [SplitSelection::Train, SplitSelection::Val, SplitSelection::Test]
            .iter()
            .map(|s| select_rows(&store, *s).len())
            .sum();
        assert_eq!(parts, 119);
    }

    #[test]
    fn layer_selection_keeps_store_order() {
        let store = small_store();
        let picked = select_layers(&store, &["llm.0".into(), "vit.0".into()]).unwrap();
        assert_eq!(picked.iter().map(|(p, _)| *p).collect::<Vec<_>>(), vec![0, 1]);
        assert!(select_layers(&store, &["vit.9".into()]).is_err());
        assert_eq!(select_layers(&store, &[]).unwrap().len(), 2);
    }

    #[test]
    fn concepts_without_sae_artifacts_fail_before_work() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            output_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let err = stage_concepts(&cfg, &small_store()).unwrap_err();
        assert!(err.to_string().contains("run the sae stage first"), "{err}");
        assert!(!dir.path().join(CONCEPTS_DIR).exists());
    }

    #[test]
    fn rsa_without_concepts_fails() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            output_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let err = stage_rsa(&cfg, &small_store()).unwrap_err();
        assert!(err.to_string().contains("run the concepts stage first"), "{err}");
    }
}
