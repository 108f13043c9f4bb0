//! Batch front end: reads a TOML run configuration, applies overrides,
//! dispatches one subcommand and writes plain-text results.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::Parser;
use thiserror::Error;

pub use config::{Command, RunConfig};

/// Name of the canonical configuration copy written to every output directory.
pub const CONFIG_ECHO: &str = "config.toml";

pub const THREADS_ENV: &str = "NONHOLOMECH_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    /// Help or version text requested; not a failure.
    #[error("{0}")]
    Help(String),
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Simulation(#[from] nonholomech::Error),
    #[error("output error: {0}")]
    Output(String),
    #[error("{0} validation checks failed")]
    ValidationFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Help(_) => 0,
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "nonholomech",
    version,
    about = "Simulate externally actuated snake and Chaplygin-beanie locomotors",
    override_usage = "nonholomech <SUBCOMMAND|CONFIG> [CONFIG] [--out DIR] [--set key=value]...",
    after_help = subcommand_help()
)]
struct Args {
    /// Subcommand name, or a config file whose `command` key selects one.
    target: String,
    /// Config file (TOML) when a subcommand is given explicitly.
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override one config key, e.g. `--set sweep.n_points=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

const fn subcommand_help() -> &'static str {
    "Subcommands:\n  snake-field  snake-gait  snake-platform  snake-reduce-theta\n  chaplygin-passive  chaplygin-forced  chaplygin-sweep  chaplygin-headings  chaplygin-multi\n  validate"
}

fn usage() -> String {
    format!(
        "usage: nonholomech <SUBCOMMAND|CONFIG> [CONFIG] [--out DIR] [--set key=value]...\n{}",
        subcommand_help()
    )
}

fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::parse(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a non-negative integer, got {raw:?}")))?;
    // the pool can only be set once per process; later calls keep the first size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Resolves arguments into the effective configuration and its command.
pub fn resolve<I, T>(argv: I) -> Result<(Command, RunConfig), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = Args::try_parse_from(argv).map_err(|e| match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Help(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    })?;
    let (explicit, path) = match Command::from_name(&args.target) {
        Some(cmd) => (Some(cmd), args.config),
        None => {
            let path = PathBuf::from(&args.target);
            if args.config.is_some() {
                return Err(CliError::Usage(format!("unknown subcommand {:?}\n{}", args.target, usage())));
            }
            if !path.is_file() {
                return Err(CliError::Usage(format!(
                    "unknown subcommand or missing config file {:?}\n{}",
                    args.target,
                    usage()
                )));
            }
            (None, Some(path))
        }
    };
    let mut cfg = match &path {
        Some(p) => load(p)?,
        None => RunConfig::default(),
    };
    for spec in &args.overrides {
        cfg.apply_override(spec)?;
    }
    let cmd = explicit
        .or(cfg.command)
        .ok_or_else(|| CliError::Usage(format!("no subcommand given and the config has no `command`\n{}", usage())))?;
    cfg.command = Some(cmd);
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    Ok((cmd, cfg))
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match try_run(argv) {
        Ok(()) => 0,
        Err(CliError::Help(text)) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn try_run<I, T>(argv: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (cmd, cfg) = resolve(argv)?;
    configure_threads()?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Output(format!("cannot create {}: {e}", out.display())))?;
    nonholomech::io::write_atomic(&out.join(CONFIG_ECHO), cfg.to_toml().as_bytes())?;
    for path in commands::run(cmd, &cfg, &out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
