use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes. Usage errors reported by the argument parser also
/// exit with [`exit::CONFIG`].
pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERIC: u8 = 4;
    pub const IO: u8 = 5;
    pub const CHECKPOINT: u8 = 6;
    pub const GRADCHECK: u8 = 7;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] onsetnet::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("gradient check failed for {0}")]
    GradCheck(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        use onsetnet::Error as E;
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::GradCheck(_) => exit::GRADCHECK,
            CliError::Core(e) => match e {
                E::Shape(_) | E::InvalidArgument(_) | E::Config(_) => exit::CONFIG,
                E::Annotation { .. } | E::Dataset(_) | E::Image { .. } => exit::DATA,
                E::NonFinite(_) => exit::NUMERIC,
                E::Io { .. } => exit::IO,
                E::Checkpoint(_) => exit::CHECKPOINT,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
