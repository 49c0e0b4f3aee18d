//! `dyhatr`: train, evaluate, and ablate dynamic heterogeneous network
//! embeddings from the command line. Every subcommand is a pure function of
//! its input files, config, and seed, so reruns reproduce outputs
//! byte-for-byte.

mod commands;

use clap::{Parser, Subcommand, ValueEnum};
use dyhatr::eval::FeatureMode;
use dyhatr::params::{RnnKind, TemporalVariant};
use dyhatr::temporal::MaskKind;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "dyhatr",
    version,
    about = "Dynamic heterogeneous network embeddings via hierarchical and temporal attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic drifting stochastic-block dynamic graph.
    Synth {
        /// Generator spec (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default `out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; writes a checkpoint and a per-epoch metrics log.
    Train {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Temporal attention mask orientation.
        #[arg(long)]
        mask: Option<MaskArg>,
        /// Recurrent cell kind.
        #[arg(long)]
        rnn: Option<RnnArg>,
    },
    /// Evaluate a checkpoint by dynamic link prediction on the held-out
    /// snapshot; writes metrics JSON and prints a table.
    Eval {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path (default `<out_dir>/model.ckpt`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Override the evaluation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Link feature construction.
        #[arg(long)]
        feature: Option<FeatureArg>,
    },
    /// Write a checkpoint's node embeddings as text, one node per line.
    Embed {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path (default `<out_dir>/model.ckpt`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate several model variants under one seed set.
    Ablate {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Link feature construction.
        #[arg(long)]
        feature: Option<FeatureArg>,
        /// Comma-separated variants to run (default: all).
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<VariantArg>>,
    },
}

#[derive(Debug, Copy, Clone, ValueEnum)]
enum MaskArg {
    /// Each snapshot attends to itself and later snapshots.
    #[value(alias = "eq7")]
    Forward,
    /// Each snapshot attends to itself and earlier snapshots.
    Causal,
}

impl From<MaskArg> for MaskKind {
    fn from(m: MaskArg) -> MaskKind {
        match m {
            MaskArg::Forward => MaskKind::Forward,
            MaskArg::Causal => MaskKind::Causal,
        }
    }
}

#[derive(Debug, Copy, Clone, ValueEnum)]
enum RnnArg {
    Gru,
    Lstm,
}

impl From<RnnArg> for RnnKind {
    fn from(r: RnnArg) -> RnnKind {
        match r {
            RnnArg::Gru => RnnKind::Gru,
            RnnArg::Lstm => RnnKind::Lstm,
        }
    }
}

#[derive(Debug, Copy, Clone, ValueEnum)]
enum FeatureArg {
    /// Element-wise product of the endpoint embeddings.
    Hadamard,
    /// Scalar inner product.
    Dot,
}

impl From<FeatureArg> for FeatureMode {
    fn from(f: FeatureArg) -> FeatureMode {
        match f {
            FeatureArg::Hadamard => FeatureMode::Hadamard,
            FeatureArg::Dot => FeatureMode::Dot,
        }
    }
}

/// Ablation rows: concatenation only, recurrence only (either cell),
/// temporal attention only, or the full model (either cell).
#[derive(Debug, Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    C,
    Gru,
    Lstm,
    T,
    Tgru,
    Tlstm,
}

impl VariantArg {
    pub const ALL: [VariantArg; 6] = [
        VariantArg::C,
        VariantArg::Gru,
        VariantArg::Lstm,
        VariantArg::T,
        VariantArg::Tgru,
        VariantArg::Tlstm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VariantArg::C => "c",
            VariantArg::Gru => "gru",
            VariantArg::Lstm => "lstm",
            VariantArg::T => "t",
            VariantArg::Tgru => "tgru",
            VariantArg::Tlstm => "tlstm",
        }
    }

    /// The (temporal variant, recurrent cell) pair this row trains. The cell
    /// is irrelevant for `c` and `t` but must still be a valid setting.
    pub fn settings(self) -> (TemporalVariant, RnnKind) {
        match self {
            VariantArg::C => (TemporalVariant::Concat, RnnKind::Gru),
            VariantArg::Gru => (TemporalVariant::RnnOnly, RnnKind::Gru),
            VariantArg::Lstm => (TemporalVariant::RnnOnly, RnnKind::Lstm),
            VariantArg::T => (TemporalVariant::AttentionOnly, RnnKind::Gru),
            VariantArg::Tgru => (TemporalVariant::Full, RnnKind::Gru),
            VariantArg::Tlstm => (TemporalVariant::Full, RnnKind::Lstm),
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, seed, out } => commands::synth(&config, seed, out),
        Command::Train { config, seed, out, mask, rnn } => {
            commands::train(&config, seed, out, mask.map(Into::into), rnn.map(Into::into))
        }
        Command::Eval { config, checkpoint, seed, out, feature } => {
            commands::eval(&config, checkpoint, seed, out, feature.map(Into::into))
        }
        Command::Embed { config, checkpoint, out } => commands::embed(&config, checkpoint, out),
        Command::Ablate { config, seed, out, feature, variants } => commands::ablate(
            &config,
            seed,
            out,
            feature.map(Into::into),
            &variants.unwrap_or_else(|| VariantArg::ALL.to_vec()),
        ),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
