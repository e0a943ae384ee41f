use std::path::PathBuf;

use kinemb::descriptor::DescriptorError;
use kinemb::koopman::KoopmanError;
use kinemb::pretrain::PretrainError;
use kinemb::scalelab::ScaleError;
use kinemb::trajio::TrajError;
use kinemb::vamphead::VampError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("refusing to overwrite {0} (pass --force)")]
    RefuseOverwrite(PathBuf),
    #[error("malformed records file {path}: {source}")]
    Records {
        path: PathBuf,
        #[source]
        source: ScaleError,
    },
    #[error("LagTooLarge: lag {lag} needs more than {len} frames in `{id}`")]
    LagTooLarge { lag: usize, len: usize, id: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: TrajError,
    },
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
    #[error(transparent)]
    Vamp(#[from] VampError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
}

impl CliError {
    /// 2 for configuration and usage problems, 1 for everything that fails
    /// while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ConfigRead { .. }
            | CliError::Config { .. }
            | CliError::Usage(_)
            | CliError::RefuseOverwrite(_)
            | CliError::Records { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
