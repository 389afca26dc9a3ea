//! Command-line front end: `volt3d <command> [--config FILE] [key=value ...]`.
//!
//! Exit codes: 0 success, 1 runtime or numeric failure, 2 usage, config or
//! data error.

mod commands;
mod config;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::nifti::NiftiError;
use crate::trainer::TrainError;

pub use commands::{
    cmd_ab, cmd_augment, cmd_eval, cmd_gradcheck, cmd_inspect, cmd_phantom, cmd_preprocess, cmd_train, format_header,
    AbReport, AbRow, TrainOutcome, AB_FILE, CHECKPOINT_FILE, CURVES_FILE, METRICS_FILE,
};
pub use config::{parse_pairs, RunConfig, KEYS, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const USAGE: &str = "usage: volt3d <inspect FILE|phantom|preprocess|augment|train|eval|ab|gradcheck> [--config FILE] [key=value ...]";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => EXIT_RUNTIME,
            _ => EXIT_USAGE,
        }
    }
}

/// `Variant: message`, with the variant name taken from the Debug form.
fn named<E: fmt::Debug + fmt::Display>(e: &E) -> String {
    let debug = format!("{e:?}");
    let name: String = debug.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
    format!("{name}: {e}")
}

impl From<NiftiError> for CliError {
    fn from(e: NiftiError) -> Self {
        CliError::Data(named(&e))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Nifti(inner) | DatasetError::Load { source: inner, .. } => inner.into(),
            other => CliError::Data(named(&other)),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InfeasibleSpec(_) | ModelError::InvalidSpec(_) => CliError::Config(named(&e)),
            ModelError::Layer(_) | ModelError::Tensor(_) | ModelError::StaleTape => CliError::Runtime(named(&e)),
            _ => CliError::Data(named(&e)),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(named(&e))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Dataset(e) => e.into(),
            TrainError::Model(e) => e.into(),
            TrainError::Metrics(e) => e.into(),
            TrainError::InvalidConfig(_) => CliError::Config(named(&e)),
            TrainError::Io(_) => CliError::Data(named(&e)),
            TrainError::NonFiniteLoss { .. } | TrainError::KeyMismatch(_) | TrainError::Layer(_) => {
                CliError::Runtime(named(&e))
            }
        }
    }
}

struct Invocation {
    command: String,
    positional: Vec<String>,
    config: Option<PathBuf>,
    overrides: Vec<String>,
}

fn parse_args(args: &[String]) -> Result<Invocation, CliError> {
    let mut it = args.iter();
    let command = it.next().ok_or_else(|| CliError::Usage(USAGE.into()))?.clone();
    let mut inv = Invocation {
        command,
        positional: Vec::new(),
        config: None,
        overrides: Vec::new(),
    };
    while let Some(a) = it.next() {
        if a == "--config" {
            let f = it.next().ok_or_else(|| CliError::Usage("--config needs a file".into()))?;
            inv.config = Some(PathBuf::from(f));
        } else if let Some(f) = a.strip_prefix("--config=") {
            inv.config = Some(PathBuf::from(f));
        } else if a.starts_with('-') {
            return Err(CliError::Usage(format!("unknown flag '{a}'\n{USAGE}")));
        } else if a.contains('=') {
            inv.overrides.push(a.clone());
        } else {
            inv.positional.push(a.clone());
        }
    }
    Ok(inv)
}

fn dispatch(args: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let inv = parse_args(args)?;
    let no_positional = |inv: &Invocation| match inv.positional.first() {
        Some(p) => Err(CliError::Usage(format!("unexpected argument '{p}'\n{USAGE}"))),
        None => Ok(()),
    };
    if inv.command == "inspect" {
        let [path] = &inv.positional[..] else {
            return Err(CliError::Usage("usage: volt3d inspect FILE".into()));
        };
        cmd_inspect(path.as_ref(), out)?;
        return Ok(());
    }
    if matches!(inv.command.as_str(), "help" | "-h" | "--help") {
        writeln!(out, "{USAGE}\nconfig keys:\n  {}", KEYS.join("\n  ")).map_err(|e| CliError::Data(e.to_string()))?;
        return Ok(());
    }
    no_positional(&inv)?;
    let cfg = RunConfig::load(inv.config.as_deref(), &inv.overrides)?;
    match inv.command.as_str() {
        "phantom" => cmd_phantom(&cfg, out).map(drop),
        "preprocess" => cmd_preprocess(&cfg, out).map(drop),
        "augment" => cmd_augment(&cfg, out).map(drop),
        "train" => cmd_train(&cfg, out).map(drop),
        "eval" => cmd_eval(&cfg, out).map(drop),
        "ab" => cmd_ab(&cfg, out).map(drop),
        "gradcheck" => match cmd_gradcheck(&cfg, out)? {
            true => Ok(()),
            false => Err(CliError::Runtime("gradient check failed".into())),
        },
        other => Err(CliError::Usage(format!("unknown command '{other}'\n{USAGE}"))),
    }
}

/// Runs one command and returns the process exit code. Errors go to `err`.
pub fn run(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match dispatch(args, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
