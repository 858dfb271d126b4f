//! Command-line driver: dataset preparation, synthesis, training,
//! evaluation, trajectory export and ablation runs.
//!
//! Every subcommand takes a flat `key = value` config file (`--config`) and
//! `--key=value` overrides for any of its config keys. Overrides win over the
//! file. Exit code 2 means malformed input, 1 any other failure; a failed
//! command leaves a `.failed` marker in its output directory.

mod commands;
mod output;
mod synth;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use tlsqkt_core::data::DataError;
use tlsqkt_core::model::ModelError;
use tlsqkt_core::train::{ConfigError, TrainError};

pub use output::OutputDir;
pub use synth::SynthSettings;

#[derive(Debug, Parser)]
#[command(name = "tlsqkt", version, about = "Literacy tracing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a raw export to canonical CSV and write dataset statistics.
    Prep(PrepArgs),
    /// Generate the synthetic literacy dataset.
    Synth(SynthArgs),
    /// Train one variant and write its report and checkpoint.
    Train(ConfigArgs),
    /// Score a checkpoint on one split of its dataset.
    Eval(EvalArgs),
    /// Export per-dimension literacy trajectories from a checkpoint.
    Trace(TraceArgs),
    /// Train the ablation variants and write a summary table.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Assist09,
    Canonical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Format,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(skip)]
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(skip)]
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Applied on top of the checkpoint's config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(skip)]
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated variants; the four ablations when absent.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(skip)]
    pub overrides: Vec<(String, String)>,
}

/// Separates `--key=value` config overrides from the subcommand's own flags.
///
/// An argument is an override when it has the form `--key=value` and `key`
/// is not a flag of the chosen subcommand. Returns the remaining argv and the
/// overrides in command-line order.
pub fn split_overrides(args: Vec<OsString>) -> (Vec<OsString>, Vec<(String, String)>) {
    let cmd = Cli::command();
    let mut sub: Option<clap::Command> = None;
    let mut kept = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for (i, arg) in args.into_iter().enumerate() {
        let text = arg.to_str().map(str::to_owned);
        match (&sub, text) {
            (None, Some(t)) if i > 0 && !t.starts_with('-') => {
                sub = cmd.find_subcommand(&t).cloned();
                kept.push(arg);
            }
            (Some(s), Some(t)) if t.starts_with("--") && t.contains('=') => {
                let (key, value) = t[2..].split_once('=').expect("checked above");
                let own = s.get_arguments().any(|a| a.get_long() == Some(key));
                if own {
                    kept.push(arg);
                } else {
                    overrides.push((key.to_string(), value.to_string()));
                }
            }
            _ => kept.push(arg),
        }
    }
    (kept, overrides)
}

/// Parses argv, attaching overrides to the subcommand that accepts them.
pub fn parse(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let (kept, overrides) = split_overrides(args);
    let matches = Cli::command().try_get_matches_from(kept)?;
    let mut cli = Cli::from_arg_matches(&matches)?;
    match &mut cli.command {
        Command::Synth(a) => a.overrides = overrides,
        Command::Train(a) => a.overrides = overrides,
        Command::Eval(a) => a.overrides = overrides,
        Command::Ablate(a) => a.overrides = overrides,
        Command::Prep(_) | Command::Trace(_) => {
            if let Some((key, _)) = overrides.first() {
                return Err(Cli::command().error(
                    clap::error::ErrorKind::UnknownArgument,
                    format!("unexpected argument `--{key}`"),
                ));
            }
        }
    }
    Ok(cli)
}

/// 2 for malformed input (bad config, bad CSV rows), 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return if e.is_malformed_input() { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Config(_) => 2,
                TrainError::Data(d) if d.is_malformed_input() => 2,
                _ => 1,
            };
        }
        if let Some(ModelError::Json(_)) = cause.downcast_ref::<ModelError>() {
            return 2;
        }
    }
    1
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Prep(a) => commands::prep(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Trace(a) => commands::trace(&a),
        Command::Ablate(a) => commands::ablate(&a),
    }
}
