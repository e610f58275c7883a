//! `msood`: fit, select, score and evaluate multi-scale OOD detectors over
//! activation archives.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msood_core::{Split, SynthMode};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] msood_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_io() => 1,
            CliError::Io { .. } => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "msood",
    version,
    args_override_self = true,
    about = "Multi-scale out-of-distribution detection over layer activations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic activation archive.
    Synth(SynthArgs),
    /// Fit per-layer detectors on ID train and validation archives.
    Fit(FitArgs),
    /// Pick the layer whose detector best rejects a tuning OOD archive.
    SelectLayer(SelectArgs),
    /// Score every sample of an archive with the selected layer.
    Score(ScoreArgs),
    /// Compute AUROC, detection accuracy and TNR at a fixed TPR from score files.
    Evaluate(EvaluateArgs),
    /// Summarize an archive or a bundle.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Destination archive directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML file; its [synth] section is the starting point for the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Channels per layer, e.g. `8,16,32,64`.
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<u32>>,
    /// Spatial size per layer, e.g. `8x8,4x4,4x4,2x2`.
    #[arg(long, value_delimiter = ',', value_parser = parse_spatial)]
    spatial: Option<Vec<(u32, u32)>>,
    #[arg(long)]
    latent_dim: Option<u32>,
    #[arg(long)]
    n_samples: Option<u32>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    shift_layer: Option<u32>,
    #[arg(long)]
    shift_magnitude: Option<f64>,
    /// Independent sample stream under the same weights.
    #[arg(long)]
    stream: Option<u64>,
    #[arg(long)]
    split: Option<Split>,
    /// Timestamp recorded in the manifest instead of the current time.
    #[arg(long)]
    created_utc: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Id,
    Ood,
}

impl From<ModeArg> for SynthMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Id => SynthMode::Id,
            ModeArg::Ood => SynthMode::Ood,
        }
    }
}

fn parse_spatial(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(w)?, parse(h)?))
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tpr_target: Option<f64>,
    #[arg(long)]
    forced_layer: Option<u32>,
    /// Also run layer selection on this OOD archive.
    #[arg(long)]
    tune_ood: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    tune_ood: Option<PathBuf>,
    /// Write the updated bundle here instead of in place.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    archive: PathBuf,
    /// Score CSV destination.
    #[arg(long)]
    out: PathBuf,
    /// Also write every layer's raw score to this CSV.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ColumnArg {
    Normality,
    RawScore,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OrientationArg {
    HigherIsId,
    HigherIsOod,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Score CSV of in-distribution samples.
    #[arg(long)]
    id: PathBuf,
    /// Score CSV of out-of-distribution samples.
    #[arg(long)]
    ood: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    tpr_target: f64,
    #[arg(long, value_enum, default_value_t = ColumnArg::Normality)]
    column: ColumnArg,
    /// Direction of the chosen column; normality is always higher-is-id.
    #[arg(long, value_enum)]
    orientation: Option<OrientationArg>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Archive or bundle directory.
    path: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Fit(a) => commands::fit(a),
        Command::SelectLayer(a) => commands::select(a),
        Command::Score(a) => commands::score(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
