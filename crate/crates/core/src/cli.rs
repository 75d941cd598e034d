//! Command-line front end.
//!
//! Every failure is reported as one `error: <kind>: <message>` line and a
//! kind-specific exit status.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ConfigError, RunConfig};
use crate::corpus::{
    generate_zipf_sequences, item_counts, rank_frequency_slope, read_sequences, sequences_to_tokens,
    write_sequences, Corpus, CorpusError, Vocabulary, ZipfConfig,
};
use crate::model::{CpRec, ModelError};
use crate::numerics::NumericsError;
use crate::partition::compression_report;
use crate::trainer::{evaluate, load_checkpoint, save_checkpoint, train, CheckpointError, Metrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Config,
    Io,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Config => 2,
            ErrorKind::Io => 3,
            ErrorKind::Numeric => 4,
        }
    }

    fn label(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Config => "config",
            ErrorKind::Io => "io",
            ErrorKind::Numeric => "numeric",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // keep the report on a single line
        let msg = self.message.replace('\n', " ");
        write!(f, "error: {}: {msg}", self.kind.label())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        let kind = match e {
            CorpusError::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Config,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match e {
            ModelError::Numerics(NumericsError::NonFinite(_)) => ErrorKind::Numeric,
            _ => ErrorKind::Config,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => Self::new(ErrorKind::Io, e.to_string()),
            CheckpointError::Config(m) => m.into(),
            other => Self::config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cprec", version, about = "Compressed sequential recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Kv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic Zipf/Markov interaction corpus.
    GenData(GenDataArgs),
    /// Print parameter counts for a configuration.
    CountParams(CountParamsArgs),
    /// Train a model and write its artifacts to a directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub items: usize,
    #[arg(long)]
    pub sequences: usize,
    #[arg(long)]
    pub seq_len: usize,
    /// Zipf exponent of item popularity.
    #[arg(long, default_value_t = 1.0)]
    pub zipf: f64,
    /// Probability that the next item follows the previous item's transitions.
    #[arg(long, default_value_t = 0.0)]
    pub markov: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CountParamsArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for initialization, shuffling and the train/test split.
    #[arg(long)]
    pub seed: u64,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,20")]
    pub topn: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            return match e.kind() {
                K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(out, "{e}");
                    if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand {
                        ErrorKind::Usage.exit_code()
                    } else {
                        0
                    }
                }
                _ => {
                    let first = e.to_string();
                    let line = first.lines().next().unwrap_or("invalid arguments");
                    let line = line.trim_start_matches("error: ");
                    eprintln!("{}", CliError::new(ErrorKind::Usage, line));
                    ErrorKind::Usage.exit_code()
                }
            };
        }
    };
    match run(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.kind.exit_code()
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::GenData(a) => gen_data(&a, out),
        Command::CountParams(a) => count_params(&a, out),
        Command::Train(a) => train_cmd(&a, out),
        Command::Eval(a) => eval_cmd(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::new(ErrorKind::Io, format!("stdout: {e}")))
}

fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = ZipfConfig {
        items: a.items,
        sequences: a.sequences,
        seq_len: a.seq_len,
        exponent: a.zipf,
        markov_weight: a.markov,
        seed: a.seed,
    };
    let sequences = generate_zipf_sequences(&config)?;
    write_sequences(&a.out, &sequences_to_tokens(&sequences))?;
    let counts = item_counts(&sequences, a.items);
    let seen = counts.iter().filter(|&&c| c > 0).count();
    let slope = rank_frequency_slope(&counts).unwrap_or(f64::NAN);
    emit(
        out,
        &format!(
            "sequences={}\nitems_seen={seen}\nmax_count={}\nrank_frequency_slope={slope:.4}\n",
            sequences.len(),
            counts.iter().max().copied().unwrap_or(0),
        ),
    )
}

fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(RunConfig::parse(&text)?)
}

/// Data paths in a config are relative to the config file.
fn data_path(config: &RunConfig, config_path: &Path) -> Option<PathBuf> {
    config.data.path.as_ref().map(|p| {
        if p.is_absolute() {
            p.clone()
        } else {
            config_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    })
}

fn count_params(a: &CountParamsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = read_config(&a.config)?;
    let items = match (config.data.items, data_path(&config, &a.config)) {
        (Some(k), _) => k,
        (None, Some(path)) => Vocabulary::build(&read_sequences(&path)?)?.len(),
        (None, None) => return Err(CliError::config("set data.items or data.path")),
    };
    let model = config.model_config(items)?;
    let report = compression_report(&model.count_config()?).map_err(ModelError::from)?;
    match a.format {
        Format::Kv => emit(out, &report.to_kv()),
        Format::Text => emit(out, &format!("{report}\n")),
    }
}

fn train_cmd(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut config = read_config(&a.config)?;
    config.training.seed = a.seed;
    let path = data_path(&config, &a.config)
        .ok_or_else(|| CliError::config("data.path is required for training"))?;
    if !path.is_file() {
        return Err(CliError::new(
            ErrorKind::Io,
            format!("{}: data file not found", path.display()),
        ));
    }
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;

    let raw = read_sequences(&path)?;
    let corpus = Corpus::from_raw(&raw, config.data.seq_len)?;
    let model_config = config.model_config(corpus.num_items())?;
    if let Some(&n) = config.eval.topn.iter().max() {
        if n > corpus.num_items() {
            return Err(CliError::config(format!(
                "eval.topn {n} exceeds the corpus's {} items",
                corpus.num_items()
            )));
        }
    }
    let (train_set, test_set) = corpus.split_train_test(config.eval.train_ratio, a.seed)?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(CliError::config("corpus too small to split into train and test"));
    }
    let echo = a.out.join("config.ini");
    fs::write(&echo, config.to_text()).map_err(|e| CliError::io(&echo, e))?;

    let mut model = CpRec::new(model_config)?;
    let mut log = String::from("epoch\tloss\tsteps\tseconds\n");
    let mut progress = Vec::new();
    let report = train(&mut model, &train_set, &config.training, |e| {
        log += &format!("{}\t{:.6}\t{}\t{:.3}\n", e.epoch, e.loss, e.steps, e.elapsed.as_secs_f64());
        progress.push(format!("epoch {:>3}  loss {:.6}  ({:.1}s)\n", e.epoch, e.loss, e.elapsed.as_secs_f64()));
    })?;
    if !a.quiet {
        for line in &progress {
            emit(out, line)?;
        }
    }
    let loss_log = a.out.join("loss.tsv");
    fs::write(&loss_log, log).map_err(|e| CliError::io(&loss_log, e))?;

    save_checkpoint(&model, Some(&corpus.vocab), &a.out.join("model.ckpt"))?;

    let mut metrics = evaluate(&model, &test_set, &config.eval.topn)?;
    metrics.train_seconds = Some(report.elapsed.as_secs_f64());
    metrics.softmax_seconds_per_step = Some(report.softmax_seconds_per_step());
    let mut kv = metrics.to_kv();
    kv += &format!("epochs={}\nsteps={}\nconverged={}\n", report.epochs.len(), report.steps(), report.converged);
    let metrics_path = a.out.join("metrics.kv");
    fs::write(&metrics_path, &kv).map_err(|e| CliError::io(&metrics_path, e))?;
    emit(out, &format!("{metrics}"))
}

fn eval_cmd(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let checkpoint = load_checkpoint(&a.checkpoint)?;
    let model = checkpoint.model;
    let vocab = checkpoint
        .vocab
        .ok_or_else(|| CliError::config("checkpoint carries no vocabulary"))?;
    let raw = read_sequences(&a.data)?;
    if raw.iter().all(|s| s.is_empty()) {
        return Err(CliError::config(format!("{}: no sequences", a.data.display())));
    }
    let seq_len = model.config().seq_len.max(2);
    let test = Corpus::encode_with(&raw, seq_len, Arc::new(vocab))?;
    if test.num_items() != model.num_items() {
        return Err(CliError::config(format!(
            "checkpoint vocabulary has {} items, model has {}",
            test.num_items(),
            model.num_items()
        )));
    }
    let metrics: Metrics = evaluate(&model, &test, &a.topn)?;
    match a.format {
        Format::Kv => emit(out, &metrics.to_kv()),
        Format::Text => emit(out, &format!("{metrics}")),
    }
}
