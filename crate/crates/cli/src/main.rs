//! `phenoclass` command-line interface.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use phenoclass::config::RunConfig;

fn defaults() -> RunConfig {
    RunConfig::default()
}

#[derive(Debug, Parser)]
#[command(name = "phenoclass", version, about = "Tree-species classification from satellite pixel time series")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. A flag given on the command line wins
/// over the config file, which wins over the built-in defaults.
#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for single-seed commands
    #[arg(long, global = true, default_value_t = defaults().seed)]
    pub seed: u64,
    /// Comma-separated seeds for multi-seed commands
    #[arg(long, global = true, value_delimiter = ',', default_values_t = defaults().seeds)]
    pub seeds: Vec<u64>,
    /// Label set of the dataset (and synthetic preset)
    #[arg(long, global = true, value_parser = ["comb", "simb", "siba"], default_value_t = defaults().synth.preset)]
    pub preset: String,
    /// Sensor subset for hand-crafted features
    #[arg(long, global = true, value_parser = ["s1", "s2", "s1s2"], default_value_t = defaults().features.subset)]
    pub subset: String,
    /// Comma-separated pipelines
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        value_parser = ["rf-hand", "rf-deep", "mlp-deep"],
        default_values_t = defaults().pipelines
    )]
    pub pipeline: Vec<String>,
    /// Output directory
    #[arg(long, global = true, default_value_t = defaults().paths.out)]
    pub out: String,
    /// Input dataset directory
    #[arg(long, global = true, default_value_t = defaults().paths.data)]
    pub data: String,
    /// Encoder checkpoint stem; when omitted one is pre-trained on a synthetic pool
    #[arg(long, global = true, value_name = "STEM")]
    pub encoder: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Validate <data>/observations.csv, apply the cloud filter and write the kept rows
    Ingest,
    /// Monthly median composites from <data>/observations.csv
    Composite,
    /// Hand-crafted feature table for <data>
    Features,
    /// Generate a synthetic dataset plus its raw observations
    Synth,
    /// Masked-autoencoder pre-training on the series in <data>
    Pretrain,
    /// Fine-tune encoder and MLP head on the training split of <data>
    Finetune,
    /// Deep features of every series in <data>
    Embed,
    /// Random forest on hand-crafted (rf-hand) or frozen deep (rf-deep) features
    TrainRf,
    /// MLP head on frozen deep features
    TrainMlp,
    /// Multi-seed comparison of the selected pipelines
    Evaluate,
    /// Feature-set by sensor-subset grid for the hand-crafted forest
    Ablation,
    /// Rebuild summary.csv and confusion SVGs from a finished evaluation in <data>
    Report,
    /// Print the default configuration as TOML
    DefaultConfig,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Composite => "composite",
            Command::Features => "features",
            Command::Synth => "synth",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Embed => "embed",
            Command::TrainRf => "train-rf",
            Command::TrainMlp => "train-mlp",
            Command::Evaluate => "evaluate",
            Command::Ablation => "ablation",
            Command::Report => "report",
            Command::DefaultConfig => "default-config",
        }
    }
}

/// Failure with a machine-readable kind.
#[derive(Debug)]
pub struct Failure {
    pub kind: String,
    pub message: String,
}

impl From<phenoclass::Error> for Failure {
    fn from(e: phenoclass::Error) -> Self {
        Failure {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

impl Failure {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Failure {
            kind: kind.to_string(),
            message: message.into(),
        }
    }
}

fn explicit(matches: &ArgMatches, id: &str) -> bool {
    let given = |m: &ArgMatches| matches!(m.value_source(id), Some(ValueSource::CommandLine | ValueSource::EnvVariable));
    given(matches) || matches.subcommand().is_some_and(|(_, sub)| given(sub))
}

/// Config file (or defaults) with explicit flags applied on top.
pub fn resolve(args: &GlobalArgs, matches: &ArgMatches) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if explicit(matches, "seed") {
        cfg.seed = args.seed;
    }
    if explicit(matches, "seeds") {
        cfg.seeds = args.seeds.clone();
    }
    if explicit(matches, "preset") {
        cfg.synth.preset = args.preset.clone();
        cfg.dataset = args.preset.clone();
    }
    if explicit(matches, "subset") {
        cfg.features.subset = args.subset.clone();
    }
    if explicit(matches, "pipeline") {
        cfg.pipelines = args.pipeline.clone();
    }
    if explicit(matches, "out") {
        cfg.paths.out = args.out.clone();
    }
    if explicit(matches, "data") {
        cfg.paths.data = args.data.clone();
    }
    if let Some(stem) = &args.encoder {
        cfg.paths.encoder = stem.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("PHENOCLASS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::new("config", format!("PHENOCLASS_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::new("config", e.to_string()))
}

fn run() -> Result<(), Failure> {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            let text = e.to_string();
            let message = text.lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            return Err(Failure::new("usage", message));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Failure::new("usage", e.to_string()))?;
    configure_threads()?;
    let cfg = resolve(&cli.global, &matches)?;
    if cli.command == Command::DefaultConfig {
        print!("{}", RunConfig::default().to_toml());
        return Ok(());
    }
    let start = Instant::now();
    let record = commands::dispatch(cli.command, &cfg)?;
    manifest::write(cli.command.name(), &cfg, &record, start.elapsed())?;
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let line = serde_json::json!({ "error": f.kind, "message": f.message });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
