//! `sentret`: batch pipelines for sentence retrieval in open-ended
//! dialogues.
//!
//! Every subcommand resolves one [`Config`] (defaults, then the config
//! file, then flags), logs it, and reads or writes only the interchange
//! formats of the library: JSON-lines corpora, threads and dialogues, the
//! six-column run format, four-column qrels.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing::info;

use crate::config::Config;

macro_rules! param_flags {
    ($($(#[doc = $doc:literal])* $field:ident: $ty:ty,)*) => {
        /// Overrides for configuration keys; each flag wins over the file.
        #[derive(Args, Debug, Default)]
        #[command(next_help_heading = "Configuration overrides")]
        pub struct ParamArgs {
            $($(#[doc = $doc])* #[arg(long, global = true)] pub $field: Option<$ty>,)*
        }

        impl ParamArgs {
            fn pairs(&self) -> Vec<(&'static str, String)> {
                let mut out = Vec::new();
                $(if let Some(v) = &self.$field {
                    out.push((stringify!($field), v.to_string()));
                })*
                out
            }
        }
    };
}

param_flags! {
    /// Corpus file (JSON lines, one document per line).
    corpus: String,
    /// Index file written by `sentret index`.
    index: String,
    /// Thread file (JSON lines).
    threads: String,
    /// Stopword list, one word per line, used at index time.
    stopwords: String,
    /// Blocklist of words and phrases for test-dialogue filtering.
    blocklist: String,
    /// Stemmer: none or light.
    stemmer: String,
    /// Lowercase before stemming (true or false).
    lowercase: String,
    /// Weight of the non-anchor turns in the dialogue mixtures.
    beta: f64,
    /// Weight of the sentence score in the final blend.
    gamma: f64,
    /// Dirichlet smoothing pseudo-count.
    mu: f64,
    /// Decay rate of the turn weights.
    delta: f64,
    /// Documents retrieved in the first stage.
    k_docs: usize,
    /// Sentences returned by `retrieve`.
    k_sents: usize,
    /// Sentences retrieved per training conversation in `weaklabel`.
    weak_k_sents: usize,
    /// Reciprocal rank fusion constant.
    nu: f64,
    /// Weight of history and future in the weak-label fusion.
    lambda: f64,
    /// Future turns used by the weak annotators.
    m_future: usize,
    /// Positive and negative labels per conversation.
    k_labels: usize,
    /// BM25 term-frequency saturation.
    k1: f64,
    /// BM25 length normalization.
    b: f64,
    /// Query word budget for external reranking.
    rerank_query_tokens: usize,
    /// Text word budget for external reranking.
    rerank_text_tokens: usize,
    /// Query word budget for the embedding and scorer annotators.
    weak_query_tokens: usize,
    /// Text word budget for the embedding and scorer annotators.
    weak_text_tokens: usize,
    /// Seconds to wait for an external scorer response.
    scorer_timeout_secs: u64,
    /// Minimum analyzed tokens per turn for test dialogues.
    min_tokens: usize,
    /// Maximum analyzed tokens per turn for test dialogues.
    max_tokens: usize,
    /// Seed for splits and permutation tests.
    seed: u64,
    /// Number of validation/test splits.
    n_splits: usize,
    /// Permutations per significance test.
    n_permutations: usize,
    /// Significance level after Bonferroni correction.
    alpha: f64,
}

#[derive(Parser, Debug)]
#[command(name = "sentret", version, about = "Sentence retrieval for open-ended dialogues")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, env = "SENTRET_CONFIG")]
    config: Option<PathBuf>,

    /// Set any configuration key, e.g. `--set mu=2000`. Repeatable; applied
    /// after the dedicated flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(flatten)]
    params: ParamArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an index file from a corpus.
    Index {
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn threads into test dialogues or training conversations.
    Distill {
        #[arg(long, value_enum, default_value_t = DistillMode::Test)]
        mode: DistillMode,
        #[arg(long)]
        out: PathBuf,
        /// Keep threads created at or after this date (ISO 8601).
        #[arg(long)]
        from: Option<String>,
        /// Keep threads created before this date (ISO 8601).
        #[arg(long)]
        to: Option<String>,
    },
    /// Rank sentences for each dialogue with the two-stage initial ranker.
    Retrieve {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerank an initial run.
    Rerank {
        #[arg(long, value_enum)]
        method: RerankMethod,
        #[arg(long)]
        dialogues: PathBuf,
        /// Candidate run to rerank.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scorer program speaking the line protocol. Without it the
        /// built-in lexical overlap scorer is used.
        #[arg(long)]
        scorer_cmd: Option<String>,
        /// Replacement queries for `external`: lines of `dialogue_id<TAB>query`.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Per-turn weights for `extfuse`, comma separated.
        #[arg(long)]
        weights: Option<String>,
    },
    /// Fuse several runs by reciprocal rank.
    Fuse {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Per-run weights, comma separated.
        #[arg(long)]
        weights: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce pseudo-labeled training data from grounded threads.
    Weaklabel {
        #[arg(long)]
        out: PathBuf,
        /// Scorer program for the fused-scorer annotator.
        #[arg(long)]
        scorer_cmd: Option<String>,
        /// Embedder program for the embedding annotator.
        #[arg(long)]
        embedder_cmd: Option<String>,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
    /// Score runs against qrels over repeated test splits.
    Evaluate {
        #[arg(long)]
        qrels: PathBuf,
        /// A run file, optionally named: `NAME=PATH`. Repeatable.
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        /// Dialogues, for the grounded/ungrounded strata and breakdown.
        #[arg(long)]
        dialogues: Option<PathBuf>,
        /// Evaluate once over all judged queries instead of splits.
        #[arg(long)]
        no_splits: bool,
        /// Write one JSON record per (system, metric, subset).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Tune a reranker's parameters on each validation half and report its
    /// test-half metrics.
    Tune {
        #[arg(long, value_enum)]
        method: TuneMethod,
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Write the chosen parameters and test metrics per split.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Paired permutation tests between systems over test splits.
    Significance {
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        #[arg(long)]
        dialogues: Option<PathBuf>,
        /// Compare every system against this one instead of all pairs.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, default_value = "map")]
        metric: String,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Relevant-count and first-relevant-rank statistics of a test set.
    Stats {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DistillMode {
    Test,
    Train,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RerankMethod {
    Lm,
    Bm25,
    External,
    Extfuse,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TuneMethod {
    Lm,
    Bm25,
}

fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut config = Config::default();
    if let Some(path) = &cli.config {
        config.merge_file(path)?;
    }
    for (key, value) in cli.params.pairs() {
        config
            .set(key, &value)
            .with_context(|| format!("--{}", key.replace('_', "-")))?;
    }
    for kv in &cli.set {
        let (key, value) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        config.set(key.trim(), value).context("--set")?;
    }
    config.validate()?;
    Ok(config)
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => tracing::Level::WARN,
        (false, 0) => tracing::Level::INFO,
        (false, 1) => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .with_target(false)
        .without_time()
        .init();
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    info!("resolved configuration:\n{}", config.render().trim_end());
    use commands as c;
    match cli.command {
        Command::Index { out } => c::index(&config, &out),
        Command::Distill { mode, out, from, to } => c::distill(
            &config,
            matches!(mode, DistillMode::Train),
            &out,
            from.as_deref(),
            to.as_deref(),
        ),
        Command::Retrieve { dialogues, out } => c::retrieve(&config, &dialogues, &out),
        Command::Rerank {
            method,
            dialogues,
            run,
            out,
            scorer_cmd,
            queries,
            weights,
        } => c::rerank(
            &config,
            c::RerankRequest {
                method: match method {
                    RerankMethod::Lm => c::Method::Lm,
                    RerankMethod::Bm25 => c::Method::Bm25,
                    RerankMethod::External => c::Method::External,
                    RerankMethod::Extfuse => c::Method::ExtFuse,
                },
                dialogues: &dialogues,
                run: &run,
                out: &out,
                scorer_cmd: scorer_cmd.as_deref(),
                queries: queries.as_deref(),
                weights: weights.as_deref(),
            },
        ),
        Command::Fuse { runs, weights, out } => c::fuse(&config, &runs, weights.as_deref(), &out),
        Command::Weaklabel {
            out,
            scorer_cmd,
            embedder_cmd,
            from,
            to,
        } => c::weaklabel(
            &config,
            &out,
            scorer_cmd.as_deref(),
            embedder_cmd.as_deref(),
            from.as_deref(),
            to.as_deref(),
        ),
        Command::Evaluate {
            qrels,
            runs,
            dialogues,
            no_splits,
            json,
        } => c::evaluate(&config, &qrels, &runs, dialogues.as_deref(), no_splits, json.as_deref()),
        Command::Tune {
            method,
            dialogues,
            run,
            qrels,
            json,
        } => c::tune(
            &config,
            matches!(method, TuneMethod::Bm25),
            &dialogues,
            &run,
            &qrels,
            json.as_deref(),
        ),
        Command::Significance {
            qrels,
            runs,
            dialogues,
            baseline,
            metric,
            json,
        } => c::significance(
            &config,
            &qrels,
            &runs,
            dialogues.as_deref(),
            baseline.as_deref(),
            &metric,
            json.as_deref(),
        ),
        Command::Stats { dialogues, qrels, run } => c::stats(&dialogues, &qrels, run.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
