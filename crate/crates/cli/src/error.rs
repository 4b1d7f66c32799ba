use std::path::PathBuf;

use rpm_core::config::ConfigError;
use rpm_core::eval::{CorpusError, MismatchedCorpus};
use rpm_core::sim::UnknownScenario;
use rpm_server::client::ClientError;
use rpm_server::ServerError;
use thiserror::Error;

/// Process exit codes. Stable: scripts depend on them.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const BIND: u8 = 4;
    pub const CONNECTION: u8 = 5;
    pub const UNKNOWN_SCENARIO: u8 = 6;
    pub const MISMATCHED_CORPUS: u8 = 7;
    pub const CORRUPT_CORPUS: u8 = 8;
    pub const NOT_CLEAN: u8 = 9;
    pub const IO: u8 = 10;
    pub const REFUSED: u8 = 11;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    UnknownScenario(#[from] UnknownScenario),
    #[error(transparent)]
    MismatchedCorpus(#[from] MismatchedCorpus),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Usage(String),
    #[error("replay is not clean: {false_positive} false positives, {false_negative} false negatives")]
    NotClean { false_positive: u64, false_negative: u64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Server(ServerError::Config(_)) => exit::CONFIG,
            CliError::Server(ServerError::Bind { .. }) => exit::BIND,
            CliError::Client(ClientError::Refused(_)) => exit::REFUSED,
            CliError::Client(ClientError::NoPatients) | CliError::Usage(_) => exit::USAGE,
            CliError::Client(_) => exit::CONNECTION,
            CliError::UnknownScenario(_) => exit::UNKNOWN_SCENARIO,
            CliError::MismatchedCorpus(_) => exit::MISMATCHED_CORPUS,
            CliError::Corpus(CorpusError::Corrupt(_)) => exit::CORRUPT_CORPUS,
            CliError::Corpus(CorpusError::Io { .. }) | CliError::Io { .. } => exit::IO,
            CliError::NotClean { .. } => exit::NOT_CLEAN,
        }
    }
}
