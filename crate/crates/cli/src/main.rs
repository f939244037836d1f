mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Few-shot triage of intermittent CI failures.
#[derive(Debug, Parser)]
#[command(name = "flaketriage", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labeled corpus (JSONL) and its registry.
    GenCorpus(GenCorpusArgs),
    /// Normalize one log, or every log of a corpus.
    Preprocess(PreprocessArgs),
    /// Train a pipeline and write the model file.
    Train(TrainArgs),
    /// Classify one log.
    Predict(PredictArgs),
    /// Find the lines that drive a log's prediction.
    Sift(SiftArgs),
    /// Monte-Carlo cross-validation with hyperparameter search.
    Evaluate(EvaluateArgs),
    /// One evaluation per category subset, plus a per-class F1 table.
    ExperimentK(ExperimentKArgs),
}

#[derive(Debug, Args)]
struct CorpusInput {
    /// Labeled corpus, one JSON object per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Category names in priority order; defaults to first appearance in the corpus.
    #[arg(long)]
    registry: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    /// Where to write the registry (default: next to the corpus).
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    per_category: usize,
    #[arg(long, default_value_t = 50)]
    min_lines: usize,
    #[arg(long, default_value_t = 800)]
    max_lines: usize,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    log: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    input: CorpusInput,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train on this many sampled examples per category instead of the whole corpus.
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = 3)]
    topk: usize,
    /// Write the JSON record here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SiftArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = 2)]
    tau: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct McArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    shots: usize,
    #[arg(long, default_value_t = 30)]
    iterations: usize,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Worker threads for iterations; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: CorpusInput,
    #[command(flatten)]
    mc: McArgs,
    /// JSONL report: one record per iteration, then the aggregate.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentKArgs {
    #[command(flatten)]
    input: CorpusInput,
    #[command(flatten)]
    mc: McArgs,
    /// Priority-rank ranges, e.g. `1-8,1-10,1-13`.
    #[arg(long, value_parser = commands::parse_k_set, value_delimiter = ',', default_value = "1-8,1-10,1-13")]
    k_sets: Vec<[u32; 2]>,
    /// JSONL report, one record per subset.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    /// Bad input files or values.
    Data(String),
    Internal(String),
}

impl From<flaketriage::Error> for CliError {
    fn from(e: flaketriage::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(u8::from(usage));
        }
    };
    let run = std::panic::catch_unwind(|| match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Sift(a) => commands::sift(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::ExperimentK(a) => commands::experiment_k(a),
    });
    let err = match run {
        Ok(Ok(())) => return ExitCode::SUCCESS,
        Ok(Err(e)) => e,
        Err(_) => CliError::Internal("internal error".into()),
    };
    match &err {
        CliError::Data(m) => eprintln!("error: {m}"),
        CliError::Internal(m) => eprintln!("internal error: {m}"),
    }
    ExitCode::from(err.exit_code())
}
