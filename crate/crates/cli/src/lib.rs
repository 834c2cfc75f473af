//! Configuration, persistence and command execution around `dnls-core`.

use std::path::PathBuf;

pub mod checkpoint;
pub mod config;
pub mod export;
pub mod invariants;
pub mod run;

pub use checkpoint::CheckpointError;
pub use config::{parse_config, ConfigErrors, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECKS_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    /// A configuration that parses but cannot run the requested command.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] dnls_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Checkpoint { path: PathBuf, source: CheckpointError },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Usage(_) => EXIT_CONFIG,
            Self::Core(dnls_core::Error::BlowUp { .. }) => EXIT_BLOWUP,
            Self::Core(_) => EXIT_CONFIG,
            Self::Io { .. } | Self::Checkpoint { .. } => EXIT_IO,
        }
    }

    /// Machine-readable description for stderr.
    pub fn summary(&self) -> serde_json::Value {
        let kind = match self {
            Self::Config(_) | Self::Usage(_) | Self::Core(_) if self.exit_code() == EXIT_CONFIG => "config_error",
            Self::Core(_) => "blow_up",
            Self::Checkpoint { .. } => "checkpoint_error",
            _ => "io_error",
        };
        let errors: Vec<String> = match self {
            Self::Config(e) => e.0.clone(),
            other => vec![other.to_string()],
        };
        serde_json::json!({ "status": kind, "exit_code": self.exit_code(), "errors": errors })
    }
}
