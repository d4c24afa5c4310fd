use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use repscope::config::{RunConfig, Stage};
use repscope::error::{CliError, Result, EXIT_OK};
use repscope::pipeline::{load_store, run_pipeline, run_stage};
use repscope_core::synth::generate_synthetic;

#[derive(Debug, Parser)]
#[command(name = "repscope", version, about = "Layer-wise representation analysis of activation dumps")]
struct Cli {
    /// JSON run configuration; flags below override its scalar fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (for `synth`: where the store is written).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Activation store directory (manifest.json + *.actv).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic activation store with planted structure.
    Synth(SynthArgs),
    /// Layerwise GDV with permutation tests.
    Gdv,
    /// PCA / MDS / t-SNE projections and projected-space GDV.
    Project,
    /// Concept vectors and their held-out correlation with the score.
    Concepts,
    /// Regression head per layer.
    Head,
    /// Top-K sparse autoencoder per layer.
    Sae,
    /// Representational similarity between embedding and concept spaces.
    Rsa,
    /// Render SVG figures from existing artifacts.
    Report,
    /// Run every configured stage and write run.json.
    Run,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    vision_layers: Option<usize>,
    #[arg(long)]
    language_layers: Option<usize>,
    /// Width of every layer.
    #[arg(long)]
    dim: Option<usize>,
    /// Per-layer signal strengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    strengths: Option<Vec<f64>>,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(input) = &cli.input {
        cfg.input_dir = Some(input.clone());
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    Ok(cfg)
}

fn synth(cfg: &RunConfig, args: &SynthArgs, seed_flag: Option<u64>) -> Result<()> {
    let mut spec = cfg.synth.clone();
    if let Some(seed) = seed_flag {
        spec.seed = seed;
    }
    spec.n = args.n.unwrap_or(spec.n);
    spec.vision_layers = args.vision_layers.unwrap_or(spec.vision_layers);
    spec.language_layers = args.language_layers.unwrap_or(spec.language_layers);
    if let Some(d) = args.dim {
        spec.d_vision = d;
        spec.d_language = d;
    }
    if let Some(s) = &args.strengths {
        spec.strengths = s.clone();
    }
    let out = cfg.output_dir()?;
    let store = generate_synthetic(&spec)?;
    store.write(out)?;
    info!("wrote {} layers of {} samples to {}", store.layers.len(), store.n(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(CliError::validation("threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::validation(format!("cannot size the worker pool: {e}")))?;
    }
    let stage = match &cli.command {
        Command::Synth(args) => return synth(&cfg, args, cli.seed),
        Command::Run => return run_pipeline(&cfg),
        Command::Gdv => Stage::Gdv,
        Command::Project => Stage::Project,
        Command::Concepts => Stage::Concepts,
        Command::Head => Stage::Head,
        Command::Sae => Stage::Sae,
        Command::Rsa => Stage::Rsa,
        Command::Report => Stage::Report,
    };
    cfg.output_dir()?;
    let store = if stage.needs_store() { Some(load_store(&cfg)?) } else { None };
    run_stage(stage, &cfg, store.as_ref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
