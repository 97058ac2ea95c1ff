//! `c2f`: synthesize datasets, decompose captions, train the skeleton and
//! attribute decoders, caption images and score captions.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or contract violation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod failure;

use failure::{Failure, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "c2f", version, about = "Coarse-to-fine image captioning")]
struct Cli {
    /// TOML configuration file; defaults to the file named by $C2F_CONFIG.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for synthesis, initialization and shuffling (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene/caption dataset.
    Synth(SynthArgs),
    /// Split parse trees into skeletons and attributes and verify the roundtrip.
    Decompose(DecomposeArgs),
    /// Train the skeleton decoder.
    TrainSkel(TrainArgs),
    /// Train the attribute decoder on top of a trained skeleton decoder.
    TrainAttr(TrainAttrArgs),
    /// Caption images with trained decoders.
    Caption(CaptionArgs),
    /// Score candidate captions against references.
    Eval(EvalArgs),
    /// Compare decoder gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for the manifest and split files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train: Option<usize>,
    /// Validation images; 0 skips the split.
    #[arg(long)]
    pub val: Option<usize>,
    /// Test images; 0 skips the split.
    #[arg(long)]
    pub test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Bracketed trees, one per line.
    #[arg(long)]
    pub trees: PathBuf,
    /// Output directory; without it the dump goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Continue from the checkpoint already in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct TrainAttrArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Trained skeleton checkpoint directory.
    #[arg(long)]
    pub skel: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[arg(long)]
    pub skel: Option<PathBuf>,
    #[arg(long)]
    pub attr: Option<PathBuf>,
    /// Dataset manifest whose split provides the features.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Feature file to caption instead of a manifest split.
    #[arg(long, conflicts_with = "data")]
    pub features: Option<PathBuf>,
    /// Comma-separated image ids, or `all`.
    #[arg(long, default_value = "all")]
    pub images: String,
    /// Output directory; without it captions go to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-token attributes and attention maps.
    #[arg(long)]
    pub trace: bool,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma_skel: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma_attr: Option<f64>,
    #[arg(long)]
    pub beam_skel: Option<usize>,
    #[arg(long)]
    pub beam_attr: Option<usize>,
    /// Condition attributes on refined post-word attention (true/false).
    #[arg(long)]
    pub post_word_alpha: Option<bool>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Table,
    Toml,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `image_id<TAB>caption` lines.
    #[arg(long)]
    pub candidates: PathBuf,
    /// `image_id<TAB>caption` lines, any number per image.
    #[arg(long)]
    pub references: PathBuf,
    /// Drop every "a" from candidates and references first.
    #[arg(long)]
    pub without_a: bool,
    /// Report caption uniqueness, and novelty against an optional training captions file.
    #[arg(long, num_args = 0..=1, value_name = "TRAIN_CAPTIONS")]
    pub uniqueness: Option<Option<PathBuf>>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: ReportFormat,
    /// Output directory for report.txt and report.toml.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Width of every layer.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = config::RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    match cli.command {
        Command::Synth(a) => commands::synth(cfg, a),
        Command::Decompose(a) => commands::decompose(cfg, a),
        Command::TrainSkel(a) => commands::train_skel(cfg, a),
        Command::TrainAttr(a) => commands::train_attr(cfg, a),
        Command::Caption(a) => commands::caption(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::Gradcheck(a) => commands::gradcheck(cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
