use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};
use poolsteg::config::ExperimentConfig;
use poolsteg::harness::Split;
use poolsteg::spreading::Strategy;
use serde_json::Value;

#[derive(Debug, Parser)]
#[command(
    name = "poolsteg",
    version,
    about = "Batch steganography and pooled steganalysis experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment config; every key is optional
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set sid_params.gain=0` (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed [default: the config's `seed`, 1 unless set]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores]; results do not depend on it
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory, created if missing
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic cover bags and write their image summaries
    GenBags(GenBags),
    /// Allocate a message over generated bags with one strategy
    Spread(SpreadArgs),
    /// Embed and score one split, writing a score CSV
    Score(ScoreArgs),
    /// Turn a score CSV into Parzen-histogram bag features
    Featurize(FeaturizeArgs),
    /// Train all pooling rules on a score CSV
    Train(TrainArgs),
    /// Measure the error of trained poolers on a score CSV
    Evaluate(EvaluateArgs),
    /// Run the whole protocol and write the report
    RunAll,
    /// Render an existing report as text and per-pooling CSV tables
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenBags {
    /// Images per bag
    #[arg(long)]
    pub b: usize,
    /// Number of bags
    #[arg(long, default_value_t = 1)]
    pub bags: u64,
    /// Also write every coefficient's cost and variance
    #[arg(long)]
    pub maps: bool,
}

#[derive(Debug, Args)]
pub struct SpreadArgs {
    #[arg(long)]
    pub strategy: Strategy,
    /// Images per bag
    #[arg(long)]
    pub b: usize,
    /// Number of bags
    #[arg(long, default_value_t = 1)]
    pub bags: u64,
    /// Message length in bits per total coefficient [default: the config's `bptc`, 0.1 unless set]
    #[arg(long)]
    pub bptc: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Images per bag
    #[arg(long)]
    pub b: usize,
    #[arg(long, default_value = "train")]
    pub split: SplitArg,
    /// Run index, selecting an independent seed stream
    #[arg(long, default_value_t = 0)]
    pub run: usize,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Score CSV to featurize
    #[arg(long, value_name = "PATH")]
    pub scores: PathBuf,
    /// Reuse the featurization of a trained poolers file instead of fitting one
    #[arg(long, value_name = "PATH")]
    pub models: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training score CSV
    #[arg(long, value_name = "PATH")]
    pub scores: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Test score CSV
    #[arg(long, value_name = "PATH")]
    pub scores: PathBuf,
    /// Poolers file written by `train`
    #[arg(long, value_name = "PATH")]
    pub models: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON written by `run-all`
    #[arg(long, value_name = "PATH")]
    pub report: PathBuf,
}

/// The argument parser with the config defaults appended to every help page.
pub fn command() -> clap::Command {
    let defaults = config_defaults();
    let mut cmd = Cli::command().after_help(defaults.clone());
    let names: Vec<String> = cmd
        .get_subcommands()
        .map(|s| s.get_name().to_string())
        .collect();
    for name in names {
        let text = defaults.clone();
        cmd = cmd.mut_subcommand(name, move |s| s.after_help(text));
    }
    cmd
}

/// Every config key with its default, one `key = value` line each.
pub fn config_defaults() -> String {
    let value = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
    let mut lines = Vec::new();
    flatten("", &value, &mut lines);
    let mut s = String::from("Config keys (set in --config or with --set) and their defaults:\n");
    for line in lines {
        let _ = writeln!(s, "  {line}");
    }
    s
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}
