use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config {path}: {message}")]
    ConfigSyntax { path: PathBuf, message: String },
    #[error("config: {0}")]
    ConfigInvalid(String),
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad feature pattern: {0}")]
    Pattern(#[from] glob::PatternError),
    #[error("no files match {0}")]
    NoMatches(String),
    #[error(transparent)]
    Core(#[from] nsedit_core::Error),
    #[error(transparent)]
    Harness(#[from] nsedit_harness::HarnessError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything that fails later.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigSyntax { .. } | CliError::ConfigInvalid(_) | CliError::Pattern(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
