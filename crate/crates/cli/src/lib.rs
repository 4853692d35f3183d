//! Building blocks of the `pucnigan` command-line tool.

pub mod evaluate;
pub mod grid;
pub mod lock;
pub mod make_data;
pub mod plots;
pub mod runs;

use std::path::PathBuf;

/// Failure classes that map onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Abort(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Abort(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Abort(m) => write!(f, "training aborted: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<pucnigan::Error> for CliError {
    fn from(e: pucnigan::Error) -> Self {
        use pucnigan::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Argument(_) => CliError::Config(msg),
            E::Capacity { .. } | E::Load { .. } | E::Format { .. } => CliError::Data(msg),
            E::Aborted { .. } | E::NonFinite { .. } => CliError::Abort(msg),
            E::Io(_) | E::Json(_) | E::Image(_) => CliError::Other(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub const DATA_ROOT_VAR: &str = "PUCNIGAN_DATA_ROOT";

/// Dataset root: `$PUCNIGAN_DATA_ROOT`, else `./data`.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}
