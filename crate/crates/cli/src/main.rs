//! `lcaffect`: corpus statistics, synthetic data, V2LC pre-training, LC
//! feature extraction, fusion fine-tuning, evaluation and gradient checks.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Precision;

#[derive(Debug, Parser)]
#[command(name = "lcaffect", version, about = "Live-comment augmented affective analysis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run config; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Floating-point width for training and inference.
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print per-category corpus statistics for a manifest.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic pre-training corpus and downstream dataset.
    GenSynth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Also print the generator linear-probe report.
        #[arg(long)]
        report: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Contrastive V2LC pre-training on a corpus.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for the checkpoint, sidecar and loss log.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Extract LC features for every sample of a downstream dataset.
    Extract {
        /// V2LC checkpoint; its sidecar is the same path with a `.json` extension.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Downstream dataset (JSON lines).
        #[arg(long)]
        data: PathBuf,
        /// Output directory, one `<id>.lcaf` per sample.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the fusion model on a downstream dataset.
    Finetune {
        /// Downstream dataset (JSON lines).
        #[arg(long)]
        data: PathBuf,
        /// Directory of extracted LC features.
        #[arg(long)]
        lc_dir: Option<PathBuf>,
        /// V2LC checkpoint to extract LC features from on the fly.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Train without the LC branch.
        #[arg(long)]
        no_lc: bool,
        /// Output directory for the model, metrics and predictions.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score saved predictions.
    Eval {
        /// Predictions (JSON lines of id, prediction, label).
        #[arg(long)]
        data: PathBuf,
        /// Also write the report as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient checks of every trainable composite.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats { manifest, common } => commands::stats(&manifest, &common),
        Command::GenSynth { out, report, common } => commands::gen_synth(&out, report, &common),
        Command::Pretrain { manifest, out, common } => commands::pretrain(&manifest, &out, &common),
        Command::Extract { checkpoint, data, out, common } => commands::extract(&checkpoint, &data, &out, &common),
        Command::Finetune { data, lc_dir, checkpoint, no_lc, out, common } => {
            commands::finetune(&data, lc_dir.as_deref(), checkpoint.as_deref(), no_lc, &out, &common)
        }
        Command::Eval { data, out, common } => commands::eval(&data, out.as_deref(), &common),
        Command::Gradcheck { common } => commands::gradcheck(&common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("lcaffect: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
