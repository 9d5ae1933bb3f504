mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use rebalcl::corpus::ImbalanceMode;
use rebalcl::trainer::AblationVariant;

#[derive(Parser)]
#[command(name = "rebalcl", version, about = "Imbalanced text classification with rebalanced contrastive learning")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an imbalanced split and its word-substituted view.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        num_classes: usize,
        #[arg(long, default_value_t = 1.0)]
        ir: f64,
        #[arg(long, default_value = "exponential")]
        mode: ImbalanceMode,
        /// Synonym lexicon (`word<TAB>syn1,syn2`).
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate ablation variants over several seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Subset of variants; all ten by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<AblationVariant>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the hard-mining size `k` over several seeds.
    SweepK {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
        ks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare dataset and per-batch contrastive imbalance ratios.
    AnalyzeIr {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        num_classes: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write unit-norm contrastive embeddings of a corpus as CSV.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic benchmark corpora and a matching config.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match cli.command {
        Command::Prepare {
            input,
            num_classes,
            ir,
            mode,
            lexicon,
            rate,
            seed,
            out,
        } => commands::prepare(&commands::PrepareArgs {
            input,
            num_classes,
            ir,
            mode,
            lexicon,
            rate,
            seed,
            out,
        }),
        Command::Train { config, seed, out } => commands::train(&config, seed, &out),
        Command::Eval { model, corpus, out } => commands::eval(&model, &corpus, &out),
        Command::Ablate {
            config,
            seeds,
            variants,
            out,
        } => commands::ablate(&config, &seeds, &variants, &out),
        Command::SweepK { config, ks, seeds, out } => commands::sweep_k(&config, &ks, &seeds, &out),
        Command::AnalyzeIr {
            corpus,
            num_classes,
            batch_size,
            trials,
            seed,
            out,
        } => commands::analyze_ir(&corpus, num_classes, batch_size, trials, seed, &out),
        Command::ExportEmbeddings { model, corpus, out } => commands::export_embeddings(&model, &corpus, &out),
        Command::Synth { seed, out } => commands::synth(seed, &out),
    }
}
