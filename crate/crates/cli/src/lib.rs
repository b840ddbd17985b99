//! Command-line front end: argument parsing, run configuration and the
//! train / predict / evaluate / ablate / synth / pairgen commands.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use trialnli::corpus::SyntheticConfig;
use trialnli::ensemble::DecisionThresholds;
use trialnli::evaluation::render_table;
use trialnli::training::OptimizerKind;

use commands::{AblateArgs, PredictArgs};
use config::RunConfig;

/// A problem with the invocation itself; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "trialnli", version, about = "Entailment and evidence retrieval over clinical-trial reports")]
pub struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model, a model group or the consistency network.
    Train(TrainArgs),
    /// Ensemble checkpoints and write a prediction file.
    Predict(PredictCli),
    /// Score a prediction file against a labelled dataset.
    Evaluate(EvaluateCli),
    /// Leave-one-model-out and variant comparisons of an ensemble.
    Ablate(AblateCli),
    /// Generate a synthetic labelled dataset.
    Synth(SynthCli),
    /// Build consistency-network training pairs from a labelled dataset.
    Pairgen(PairgenCli),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model name or `all-taskA` / `all-taskB`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Cross-validation folds.
    #[arg(long)]
    pub cv: Option<usize>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_encoder: Option<f64>,
    #[arg(long)]
    pub lr_other: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Drop the token-level encoder.
    #[arg(long)]
    pub no_token_level: bool,
    #[arg(long)]
    pub encoder_weights: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Adafactor,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub eta_a: Option<f64>,
    #[arg(long)]
    pub eta_b: Option<f64>,
}

impl ThresholdArgs {
    fn resolve(&self) -> DecisionThresholds {
        let d = DecisionThresholds::default();
        DecisionThresholds { eta_a: self.eta_a.unwrap_or(d.eta_a), eta_b: self.eta_b.unwrap_or(d.eta_b) }
    }
}

#[derive(Debug, Args)]
pub struct PredictCli {
    /// Checkpoint index files written by `train`.
    #[arg(long = "checkpoints", required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Consistency-network directory; enables joint inference.
    #[arg(long)]
    pub joint: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateCli {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Directory for `report.json` and `report.txt`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateCli {
    #[arg(long = "checkpoints", required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    /// `label=index.json`: score another ensemble against the original.
    #[arg(long = "variant")]
    pub variants: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub joint: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthCli {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `toy` (short premises, no arithmetic items) or `full`.
    #[arg(long, value_enum, default_value_t = SynthPreset::Toy)]
    pub preset: SynthPreset,
    /// Prefix for trial ids and uuids.
    #[arg(long, default_value = "")]
    pub id_prefix: String,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthPreset {
    Toy,
    Full,
}

#[derive(Debug, Args)]
pub struct PairgenCli {
    #[arg(long)]
    pub data: PathBuf,
    /// Use the hypotheses unchanged instead of rule-based paraphrases.
    #[arg(long)]
    pub identity: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

/// Config file values with flag overrides applied.
pub fn resolve_train_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut c = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                c.$field = v;
            }
        };
    }
    set!(model, args.model.clone());
    set!(seed, args.seed);
    set!(output, args.out.clone());
    if args.train.is_some() {
        c.train = args.train.clone();
    }
    if args.dev.is_some() {
        c.dev = args.dev.clone();
    }
    if args.cv.is_some() {
        c.folds = args.cv;
    }
    if args.preset.is_some() {
        c.preset = args.preset.clone();
    }
    if args.epochs.is_some() {
        c.epochs = args.epochs;
    }
    if args.batch_size.is_some() {
        c.batch_size = args.batch_size;
    }
    if args.lr_encoder.is_some() {
        c.lr_encoder = args.lr_encoder;
    }
    if args.lr_other.is_some() {
        c.lr_other = args.lr_other;
    }
    if let Some(o) = args.optimizer {
        c.optimizer = Some(match o {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Adafactor => OptimizerKind::Adafactor,
        });
    }
    if args.max_len.is_some() {
        c.max_len = args.max_len;
    }
    if let Some(l) = args.lambda {
        c.loss.lambda = l;
    }
    if args.no_token_level {
        c.token_level = false;
    }
    if args.encoder_weights.is_some() {
        c.encoder_weights = args.encoder_weights.clone();
    }
    if args.vocab.is_some() {
        c.vocab = args.vocab.clone();
    }
    c.validate()?;
    Ok(c)
}

fn parse_variant(s: &str) -> Result<(String, PathBuf)> {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => Ok((label.to_string(), PathBuf::from(path))),
        _ => Err(UsageError(format!("variant `{s}` is not of the form label=index.json")).into()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = resolve_train_config(&args)?;
            let report = commands::cmd_train(&cfg)?;
            println!(
                "{} checkpoints, {} failed runs; index at {}",
                report.checkpoints.len(),
                report.failures.len(),
                cfg.output.join(commands::INDEX_FILE).display()
            );
        }
        Command::Predict(args) => {
            let file = commands::cmd_predict(&PredictArgs {
                checkpoints: args.checkpoints,
                data: args.data,
                output: args.out.clone(),
                joint: args.joint,
                thresholds: args.thresholds.resolve(),
            })?;
            println!(
                "{} task A and {} task B predictions written to {}",
                file.task_a.len(),
                file.task_b.len(),
                args.out.display()
            );
        }
        Command::Evaluate(args) => {
            let report = commands::cmd_evaluate(&args.predictions, &args.gold, args.out.as_deref())?;
            print!("{}", render_table(&report));
        }
        Command::Ablate(args) => {
            let variants = args.variants.iter().map(|v| parse_variant(v)).collect::<Result<_>>()?;
            let rows = commands::cmd_ablate(&AblateArgs {
                checkpoints: args.checkpoints,
                variants,
                data: args.data,
                output: args.out,
                joint: args.joint,
                thresholds: args.thresholds.resolve(),
            })?;
            print!("{}", commands::render_ablation(&rows));
        }
        Command::Synth(args) => {
            let base = match args.preset {
                SynthPreset::Toy => SyntheticConfig::toy(),
                SynthPreset::Full => SyntheticConfig::default(),
            };
            let cfg = SyntheticConfig { id_prefix: args.id_prefix, ..base };
            let ds = commands::cmd_synth(args.n, args.seed, &cfg, &args.out)?;
            println!("{} instances over {} trials written to {}", ds.instances.len(), ds.trials.len(), args.out.display());
        }
        Command::Pairgen(args) => {
            let (pairs, failures, seqs) = commands::cmd_pairgen(&args.data, &args.out, args.identity)?;
            println!("{pairs} contradicting pairs, {failures} skipped, {seqs} sequences written to {}", args.out.display());
        }
    }
    Ok(())
}

/// Exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}
