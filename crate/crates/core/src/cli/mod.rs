//! Command-line front end. Settings resolve as defaults < `--config` file <
//! `CLAHI_OUT_DIR` (output directory only) < flags.

mod commands;
mod config;

pub use commands::{ablation_registry, apply_variant, run};
pub use config::{EmbeddingConfig, RunConfig, OUT_DIR_ENV};

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::conversation::StructureVariant;
use crate::model::{Gnn, PostAttention};
use crate::synth::LabelRule;

#[derive(Debug, Parser)]
#[command(name = "clahi", version, about = "Rumor detection on conversation threads with claim-guided graph attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an event file and print dataset statistics.
    Validate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Train on the data minus the holdout, stopping early on the holdout.
    Train(RunArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Holdout plus k-fold cross-validation.
    Cv(RunArgs),
    /// Cross-validate a list of model variants under identical seeds and splits.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated variant names; all ten when omitted.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Accuracy at a series of early-detection checkpoints.
    Early {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated checkpoints: post counts (`10`), elapsed times
        /// (`30m`, `4h`) or `all`.
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,20,all")]
        checkpoints: Vec<String>,
        /// Evaluate this trained model instead of training one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "valid")]
        subset: Subset,
        /// Retrain on truncated data at every checkpoint.
        #[arg(long)]
        retrain: bool,
    },
    /// Write the attention weights of one event as delimited text.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "event")]
        event_id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a Twitter15/16 release directory into the event format.
    ConvertTwitter {
        /// Directory holding label.txt, source_tweets.txt and tree/.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Subset {
    /// Every event in the data file.
    All,
    /// The validation events recorded in the checkpoint.
    Valid,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML generator spec; defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rule: Option<LabelRule>,
    /// Generate the sibling-majority task and report its path-only ceiling.
    #[arg(long)]
    pub sibling_task: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the data file recorded in the checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub subset: Subset,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Word vectors in `token v1 … vd` text format.
    #[arg(long, conflicts_with = "random_embeddings")]
    pub embeddings: Option<PathBuf>,
    /// Seeded random word vectors; optional `dim=300,seed=S`.
    #[arg(long, num_args = 0..=1, default_missing_value = "", value_name = "dim=D,seed=S")]
    pub random_embeddings: Option<String>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub structure: Option<StructureVariant>,
    #[arg(long)]
    pub gnn: Option<Gnn>,
    #[arg(long)]
    pub post_attention: Option<PostAttention>,
    #[arg(long, value_parser = on_off)]
    pub event_attention: Option<bool>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train folds on separate threads; output order is unchanged.
    #[arg(long)]
    pub parallel_folds: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(format!("expected `on` or `off`, got `{s}`")),
    }
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command, &mut std::io::stdout()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
