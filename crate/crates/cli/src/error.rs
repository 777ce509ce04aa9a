use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        #[source]
        source: ali_core::Error,
    },

    #[error("{diverged} of {total} trajectories diverged")]
    DivergentRollout { diverged: usize, total: usize },

    #[error(transparent)]
    Core(#[from] ali_core::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 configuration, 3 numerical divergence, 4 I/O.
    pub fn exit_code(&self) -> u8 {
        use ali_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Input { .. } => 4,
            CliError::DivergentRollout { .. } => 3,
            CliError::Core(e) => match e {
                E::Divergence { .. } | E::NonFinite(_) => 3,
                E::Io(_) | E::Dataset(_) | E::Checkpoint(_) => 4,
                E::Shape { .. } | E::InvalidArgument(_) | E::EmptyBatch(_) => 2,
            },
        }
    }
}
