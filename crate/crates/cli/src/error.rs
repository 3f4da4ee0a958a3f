//! CLI error type and exit codes: 2 for configuration/input problems, 3 for
//! solver failures, 4 for archive fingerprint mismatches, 1 otherwise.

use thiserror::Error;

use crate::archive::ArchiveError;
use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    ConfigFile(#[from] ConfigError),
    #[error(transparent)]
    Map(#[from] peg_core::gridworld::MapError),
    #[error(transparent)]
    Env(#[from] peg_core::gridworld::EnvError),
    #[error(transparent)]
    Partition(#[from] peg_core::abstraction::PartitionError),
    #[error(transparent)]
    LocalGame(#[from] peg_core::local_games::LocalGameError),
    #[error(transparent)]
    Solve(#[from] peg_core::flat_solver::SolveError),
    #[error(transparent)]
    Hier(#[from] peg_core::simulator::HierError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_)
            | CliError::ConfigFile(_)
            | CliError::Map(_)
            | CliError::Env(_)
            | CliError::Partition(_)
            | CliError::LocalGame(_) => 2,
            CliError::Solve(_) | CliError::Hier(_) => 3,
            CliError::Archive(ArchiveError::FingerprintMismatch) => 4,
            CliError::Archive(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}
