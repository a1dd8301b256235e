mod cache;
mod commands;
mod configs;
mod predictions;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmfuse_core::evaluation::Strategy;

/// Frame-aligned early fusion of acoustic and text embeddings for
/// CN / MCI / ADRD classification.
#[derive(Parser, Debug)]
#[command(name = "mmfuse", version, about, long_about = None)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CorpusArgs {
    /// Corpus manifest (TSV).
    #[arg(short, long)]
    pub manifest: PathBuf,
    /// Run directory; created if missing.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct CacheArgs {
    /// Cache root for alignments and fused tensors [default: <out>/cache].
    #[arg(long, env = "MMFUSE_CACHE")]
    pub cache: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check that every file in a manifest exists and dimensions agree.
    Validate {
        #[arg(short, long)]
        manifest: PathBuf,
    },
    /// Generate a synthetic corpus.
    Synth {
        /// Output corpus directory.
        #[arg(short, long)]
        out: PathBuf,
        /// Generator parameters (TOML); unspecified fields use defaults.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        recordings: Option<usize>,
    },
    /// Align word timings to acoustic frames and write token spans.
    Align {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        cache: CacheArgs,
    },
    /// Build early-fusion containers for the selected layers.
    Fuse {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        cache: CacheArgs,
        /// Layers, e.g. `1-12` or `1,4,8` [default: all].
        #[arg(short, long)]
        layers: Option<String>,
    },
    /// Train one model for one strategy on one split.
    Train {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(short, long)]
        strategy: Strategy,
        #[arg(short, long)]
        layer: Option<u8>,
        /// Classifier configuration (TOML).
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Split and initialization seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Hyperparameter search on the validation partition.
    Search {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(short, long)]
        strategy: Strategy,
        /// One search per listed layer; a single layer writes to the run
        /// directory itself.
        #[arg(short, long)]
        layers: Option<String>,
        /// Base classifier configuration for fields not searched (TOML).
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Search space (TOML); unspecified dimensions use defaults.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, default_value_t = 150)]
        budget: usize,
        /// Search seed; also selects the split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Multi-seed evaluation of one strategy.
    Eval {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(short, long)]
        strategy: Strategy,
        #[arg(short, long)]
        layer: Option<u8>,
        /// Classifier config, config set, or sweep config file (TOML).
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Seeds, e.g. `1-10` [default: 1-10].
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Evaluate strategies across layers.
    Sweep {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Comma-separated strategies [default: all four].
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
        #[arg(short, long)]
        layers: Option<String>,
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Average two prediction files recording by recording.
    Latefuse {
        first: PathBuf,
        second: PathBuf,
        /// Output predictions file.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Time-aware position plan for a text encoder (TA, or TA-PAD with --pad).
    Plan {
        /// Word timing file.
        timing: PathBuf,
        /// Tokens per word: one line per word, tokens separated by whitespace.
        #[arg(short, long)]
        tokens: PathBuf,
        /// Frame resolution in seconds.
        #[arg(long, default_value_t = 0.02)]
        res: f64,
        /// Insert this pad token at the onset of each inter-word silence.
        #[arg(long)]
        pad: Option<String>,
        /// Output plan (TSV).
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Within-token frame similarity per layer.
    Probe {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(short, long)]
        layers: Option<String>,
        /// Also write similarity matrices for these recordings.
        #[arg(long, value_delimiter = ',')]
        matrices: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Validate { manifest } => commands::validate(&manifest),
        Command::Synth {
            out,
            config,
            seed,
            recordings,
        } => commands::synth(&out, config.as_deref(), seed, recordings),
        Command::Align { corpus, cache } => commands::align(&corpus, &cache),
        Command::Fuse { corpus, cache, layers } => commands::fuse(&corpus, &cache, layers.as_deref()),
        Command::Train {
            corpus,
            strategy,
            layer,
            config,
            seed,
        } => commands::train(&corpus, strategy, layer, config.as_deref(), seed),
        Command::Search {
            corpus,
            strategy,
            layers,
            config,
            space,
            budget,
            seed,
        } => commands::search(
            &corpus,
            strategy,
            layers.as_deref(),
            config.as_deref(),
            space.as_deref(),
            budget,
            seed,
        ),
        Command::Eval {
            corpus,
            strategy,
            layer,
            config,
            seeds,
        } => commands::eval(&corpus, strategy, layer, config.as_deref(), seeds.as_deref()),
        Command::Sweep {
            corpus,
            strategies,
            layers,
            config,
            seeds,
        } => commands::sweep(&corpus, strategies, layers.as_deref(), config.as_deref(), seeds.as_deref()),
        Command::Latefuse { first, second, out } => commands::latefuse(&first, &second, &out),
        Command::Plan {
            timing,
            tokens,
            res,
            pad,
            out,
        } => commands::plan(&timing, &tokens, res, pad.as_deref(), &out),
        Command::Probe {
            corpus,
            layers,
            matrices,
        } => commands::probe(&corpus, layers.as_deref(), &matrices),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(report) = e.downcast_ref::<commands::ValidationFailed>() {
                eprint!("{}", report.0);
            } else {
                // core errors already include their cause in the message
                let mut msg = e.to_string();
                for cause in e.chain().skip(1) {
                    let c = cause.to_string();
                    if !msg.contains(&c) {
                        msg = format!("{msg}: {c}");
                    }
                }
                eprintln!("error: {msg}");
            }
            ExitCode::from(1)
        }
    }
}
