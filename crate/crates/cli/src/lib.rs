//! Batch front end: config loading, figure presets and experiment runners.

pub mod config;
pub mod experiments;
pub mod output;
pub mod presets;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{Experiment, RunConfig};
pub use output::{Manifest, RunOutput};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Schema(String),

    #[error(transparent)]
    Physics(#[from] optispin::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Physics(optispin::Error::Io(_)) | CliError::Io { .. } => 4,
            CliError::Physics(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Load, run and write one experiment; returns the manifest.
pub fn run(text: &str, overrides: &[String]) -> Result<Manifest, CliError> {
    let cfg = config::load(text, overrides)?;
    let started = output::unix_time();
    let out = experiments::run(&cfg)?;
    output::write(&cfg, &out, started)
}
