use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phonograph::Stage;

mod commands;
mod output;

use output::Failure;

/// Phoneme-level deepfake speech detection.
#[derive(Parser)]
#[command(name = "phonograph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every stage, overriding the configuration.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Pretrain the phoneme recognizer with CTC on the bonafide training split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train the detector around a pretrained recognizer checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Recognizer checkpoint directory.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Score a detector checkpoint on every split of a manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Detector checkpoint directory.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Directory for the report, scores and embeddings.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Also export test-split embeddings taken at this stage.
        #[arg(long, value_parser = parse_stage)]
        stage: Option<Stage>,
        #[arg(long)]
        force: bool,
    },
    /// Average runs of equal frame labels in a PTNS1 feature file.
    Pool {
        /// Frame-level PTNS1 file.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Text file of frame labels, optionally prefixed by "labels:".
        #[arg(long, value_name = "PATH")]
        labels: PathBuf,
        /// Phoneme-level PTNS1 file to write.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Finite-difference gradient check of every block and loss.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse().map_err(|e: phonograph::Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), Failure> {
    output::configure_threads()?;
    match cli.command {
        Command::Synth { common, out, force } => commands::synth(&common, &out, force),
        Command::Pretrain {
            common,
            manifest,
            out,
            force,
        } => commands::pretrain(&common, &manifest, &out, force),
        Command::Train {
            common,
            manifest,
            checkpoint,
            out,
            force,
        } => commands::train(&common, &manifest, &checkpoint, &out, force),
        Command::Eval {
            common,
            manifest,
            checkpoint,
            out,
            stage,
            force,
        } => commands::eval(&common, &manifest, &checkpoint, out.as_deref(), stage, force),
        Command::Pool {
            input,
            labels,
            out,
            force,
        } => commands::pool(&input, &labels, &out, force),
        Command::Gradcheck { common } => commands::gradcheck(&common),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
