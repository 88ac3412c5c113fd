//! `helm-lm`: command-line front end over the peptide language-model library.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.

mod commands;
mod config;
mod manifest;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{FinetuneArgs, ProbeTaskArg, ProtocolArg, SplitArgs, Strategy, TaskArg};
use config::RunConfig;
use manifest::ManifestBuilder;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

/// Shared run context assembled from the global flags.
pub struct Ctx {
    pub seed: u64,
    pub precision_f64: bool,
    pub out_dir: PathBuf,
    pub config: RunConfig,
    config_snapshot: BTreeMap<String, String>,
}

impl Ctx {
    pub fn manifest(&self, command: &str) -> ManifestBuilder {
        ManifestBuilder::start(
            command,
            self.seed,
            if self.precision_f64 { "f64" } else { "f32" },
            self.config_snapshot.clone(),
            &self.out_dir,
        )
    }
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Parser)]
#[command(
    name = "helm-lm",
    about = "HELM peptide language model: parsing, tokenization, corpus curation, pre-training, fine-tuning and statistics",
    version
)]
struct Cli {
    /// Seed for every random choice this run makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Flat key-value config file (key = value per line).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for result files and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Numeric precision for encoder work (f64 is the verification mode).
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse HELM strings and emit topology features as JSON-lines.
    Parse {
        file: PathBuf,
        /// Write {key, structure_type, n_rings, n_monomers} here instead of stdout.
        #[arg(long)]
        features_out: Option<PathBuf>,
    },
    /// Encode HELM text to token ids (or build the vocabulary with --build).
    Tokenize {
        file: PathBuf,
        /// Vocabulary JSON to load, or to write when --build is set.
        #[arg(long)]
        vocab: PathBuf,
        /// Build the vocabulary from the file before encoding.
        #[arg(long)]
        build: bool,
        /// Write token rows here instead of stdout.
        #[arg(long)]
        tokens_out: Option<PathBuf>,
    },
    /// Deduplicate a corpus by canonical key with source priority.
    Dedup {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        dedup_out: Option<PathBuf>,
    },
    /// Build cross-validation split manifests.
    Split {
        #[arg(long, value_enum)]
        strategy: Strategy,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        val_fraction: Option<f64>,
        /// For pair strategies: sample this many negatives per positive.
        #[arg(long)]
        negatives: Option<usize>,
        /// Cluster count for the cluster strategy.
        #[arg(long, default_value_t = 100)]
        clusters: usize,
        /// PCA dimensionality for signature vectors.
        #[arg(long, default_value_t = 50)]
        pca_dims: usize,
        /// Allowed fold-weight deviation for the cluster strategy.
        #[arg(long, default_value_t = 0.15)]
        max_dev: f64,
        #[arg(long)]
        split_out: Option<PathBuf>,
        /// Write the (possibly negative-augmented) pair list here.
        #[arg(long)]
        pairs_out: Option<PathBuf>,
    },
    /// Pre-train the encoder with the masked-language objective.
    Pretrain {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        checkpoint_out: Option<PathBuf>,
        #[arg(long)]
        history_out: Option<PathBuf>,
    },
    /// Fine-tune or probe on a downstream task.
    Finetune {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Precomputed feature vectors (peptide embeddings for pairs).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Protein embedding file for pair tasks.
        #[arg(long)]
        protein_embeddings: Option<PathBuf>,
        /// Run a single fold (external parallelization).
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        #[arg(long)]
        predictions_out: Option<PathBuf>,
    },
    /// Mean-pooled sequence embeddings from a checkpoint.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        embeddings_out: Option<PathBuf>,
    },
    /// Cross-validated linear probe over an embedding file.
    Probe {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, value_enum)]
        task: ProbeTaskArg,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Apply the masking pipeline to a corpus (diagnostics).
    Mask {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Fold-wise statistical comparison of two metric reports.
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Corrected resampled t-test with FDR adjustment and effect sizes.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        n_train: usize,
        #[arg(long)]
        n_test: usize,
        #[arg(long, default_value_t = 0.05)]
        fdr_q: f64,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(CliError::Usage)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed,
        precision_f64: cli.precision == Precision::F64,
        out_dir: cli.out.clone(),
        config_snapshot: config.snapshot(),
        config,
    };
    commands::ensure_out_dir(&ctx.out_dir)?;

    match &cli.command {
        Command::Parse { file, features_out } => {
            commands::cmd_parse(&ctx, file, features_out.as_deref())
        }
        Command::Tokenize {
            file,
            vocab,
            build,
            tokens_out,
        } => commands::cmd_tokenize(&ctx, file, vocab, *build, tokens_out.as_deref()),
        Command::Dedup { input, dedup_out } => {
            commands::cmd_dedup(&ctx, input, dedup_out.as_deref())
        }
        Command::Split {
            strategy,
            input,
            k,
            val_fraction,
            negatives,
            clusters,
            pca_dims,
            max_dev,
            split_out,
            pairs_out,
        } => commands::cmd_split(
            &ctx,
            &SplitArgs {
                strategy: *strategy,
                input,
                k: *k,
                val_fraction: *val_fraction,
                negatives: *negatives,
                clusters: *clusters,
                pca_dims: *pca_dims,
                max_dev: *max_dev,
                split_out: split_out.as_deref(),
                pairs_out: pairs_out.as_deref(),
            },
        ),
        Command::Pretrain {
            input,
            vocab,
            checkpoint_out,
            history_out,
        } => commands::cmd_pretrain(
            &ctx,
            input,
            vocab,
            checkpoint_out.as_deref(),
            history_out.as_deref(),
        ),
        Command::Finetune {
            task,
            protocol,
            input,
            split,
            checkpoint,
            vocab,
            embeddings,
            protein_embeddings,
            fold,
            metrics_out,
            predictions_out,
        } => commands::cmd_finetune(
            &ctx,
            &FinetuneArgs {
                task: *task,
                protocol: *protocol,
                input,
                split,
                checkpoint: checkpoint.as_deref(),
                vocab: vocab.as_deref(),
                embeddings: embeddings.as_deref(),
                protein_embeddings: protein_embeddings.as_deref(),
                fold: *fold,
                metrics_out: metrics_out.as_deref(),
                predictions_out: predictions_out.as_deref(),
            },
        ),
        Command::Embed {
            checkpoint,
            input,
            vocab,
            embeddings_out,
        } => commands::cmd_embed(&ctx, checkpoint, input, vocab, embeddings_out.as_deref()),
        Command::Probe {
            embeddings,
            targets,
            task,
            folds,
            report_out,
        } => commands::cmd_probe(&ctx, embeddings, targets, *task, *folds, report_out.as_deref()),
        Command::Mask {
            input,
            vocab,
            mask_out,
        } => commands::cmd_mask(&ctx, input, vocab, mask_out.as_deref()),
        Command::Stats { command } => match command {
            StatsCommand::Compare {
                a,
                b,
                n_train,
                n_test,
                fdr_q,
                report_out,
            } => commands::cmd_stats_compare(
                &ctx,
                a,
                b,
                *n_train,
                *n_test,
                *fdr_q,
                report_out.as_deref(),
            ),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are success, not usage errors.
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code())
        }
    }
}
