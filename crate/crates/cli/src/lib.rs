//! Command-line driver: configuration, run manifests, and the experiment subcommands.
//!
//! Every setting is a key of [`config::KEYS`]. Values resolve from table
//! defaults, then the `--config` file, then command-line flags. Each run writes
//! the resolved settings to `<out>/manifest.txt`, which `--config` accepts as is.

pub mod commands;
pub mod config;
pub mod data;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches};
use laneforge::data::DataError;
use laneforge::eval::EvalError;
use laneforge::model::ModelError;
use laneforge::train::TrainError;

pub use config::{Command, RunConfig};

pub const THREADS_ENV: &str = "LANEFORGE_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else if e.is_data() {
            CliError::Data(e.to_string())
        } else {
            match e {
                TrainError::Config(m) => CliError::Config(m),
                TrainError::Model(m) => m.into(),
                other => CliError::Failed(other.to_string()),
            }
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidSpec(_) | ModelError::VariantMismatch { .. } | ModelError::PhaseMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub fn cli() -> clap::Command {
    let mut c = clap::Command::new("laneforge")
        .about("Lane segmentation with masked sequential autoencoder pretraining and PolyLoss fine-tuning")
        .after_help(format!("Environment: {THREADS_ENV} caps the worker threads used for data generation and evaluation."))
        .arg(Arg::new("config").long("config").value_name("FILE").global(true).help("key = value file, e.g. a previous manifest"));
    for k in config::KEYS.iter().filter(|k| k.name != "command") {
        let arg = Arg::new(k.name).long(flag_name(k.name)).global(true);
        c = c.arg(if k.switch {
            arg.action(ArgAction::SetTrue).help(k.help)
        } else if k.default.is_empty() {
            arg.value_name("VALUE").help(k.help)
        } else {
            arg.value_name("VALUE").help(format!("{} [default: {}]", k.help, k.default))
        });
    }
    for cmd in Command::ALL {
        c = c.subcommand(clap::Command::new(cmd.name()).about(cmd.about()));
    }
    c
}

fn explicit<'a>(m: &'a ArgMatches, sub: Option<&'a ArgMatches>, id: &str) -> Option<&'a ArgMatches> {
    sub.into_iter().chain([m]).find(|mm| mm.value_source(id) == Some(ValueSource::CommandLine))
}

/// Resolves parsed arguments into a configuration.
pub fn resolve(m: &ArgMatches) -> Result<RunConfig, CliError> {
    let sub = m.subcommand();
    let sm = sub.map(|(_, s)| s);
    let mut overrides = BTreeMap::new();
    if let Some(path) = explicit(m, sm, "config").and_then(|mm| mm.get_one::<String>("config")) {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
        overrides = config::parse_kv(&text, Path::new(path))?;
    }
    if let Some((name, _)) = sub {
        overrides.insert("command".into(), name.to_string());
    }
    for k in config::KEYS.iter().filter(|k| k.name != "command") {
        let Some(mm) = explicit(m, sm, k.name) else { continue };
        let value = if k.switch { mm.get_flag(k.name).to_string() } else { mm.get_one::<String>(k.name).cloned().unwrap_or_default() };
        overrides.insert(k.name.to_string(), value);
    }
    RunConfig::resolve(&overrides)
}

/// Worker count from the environment; unset means all available cores.
pub fn worker_threads() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!("{THREADS_ENV}={v:?} must be a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs a resolved configuration on a worker pool sized by [`worker_threads`].
pub fn execute(cfg: &RunConfig) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads()?)
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    pool.install(|| commands::run(cfg))
}

/// Parses `args` (program name first), runs, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match resolve(&matches).and_then(|cfg| execute(&cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("laneforge: {e}");
            e.exit_code()
        }
    }
}
