//! Command implementations behind the `lambda` binary.

pub mod args;
mod commands;

use std::ffi::OsString;
use std::path::Path;

use clap::Parser;
use serde::Deserialize;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_AUTH: i32 = 3;

/// Bad invocation or configuration; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Values from `--config`.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub log_level: Option<String>,
    pub transport: Option<String>,
    pub seed: Option<u64>,
    /// Registry operator endpoint for `deploy`.
    pub ops: Option<String>,
    /// Operator or vehicle token.
    pub token: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<FileConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }
}

/// Global settings after merging flags over the config file.
#[derive(Debug, Clone)]
pub struct Settings {
    pub transport: String,
    pub seed: u64,
    /// Seed given explicitly by flag or config file.
    pub seed_override: Option<u64>,
    pub ops: Option<String>,
    pub token: Option<String>,
}

fn exit_code(err: &anyhow::Error) -> i32 {
    use lambda_proto::ErrorCode;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(lambda_registry::RegistryError::Rejected(ErrorCode::AuthFailed, _)) = cause.downcast_ref() {
            return EXIT_AUTH;
        }
        if let Some(lambda_orchestrator::OrchestratorError::AuthRejected) = cause.downcast_ref() {
            return EXIT_AUTH;
        }
    }
    EXIT_RUNTIME
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let level = cli.log_level.clone().or(file.log_level.clone()).unwrap_or_else(|| "info".into());
    let filter: log::LevelFilter = level.parse().map_err(|_| UsageError(format!("unknown log level {level:?}")))?;
    let _ = env_logger::Builder::new().filter_level(filter).target(env_logger::Target::Stderr).try_init();
    let settings = Settings {
        transport: cli.transport.clone().or(file.transport.clone()).unwrap_or_else(|| "inproc".into()),
        seed: cli.seed.or(file.seed).unwrap_or(0),
        seed_override: cli.seed.or(file.seed),
        ops: file.ops.clone(),
        token: file.token.clone(),
    };
    commands::dispatch(cli.command, &settings)
}
