use std::io;

use thiserror::Error;

use reduktor::asymptotics::AsymptoticsError;
use reduktor::channel::ChannelError;
use reduktor::config::ConfigError;
use reduktor::jump_mc::McError;
use reduktor::scalar::ScalarError;
use reduktor::volterra::VolterraError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Io(_) => 1,
            Self::Validation(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

impl From<VolterraError> for CliError {
    fn from(e: VolterraError) -> Self {
        use VolterraError::*;
        match e {
            InvalidGrid(_)
            | NegativeRate(_)
            | HorizonOutsideGrid { .. }
            | DimensionMismatch { .. }
            | KernelNormalizationViolation { .. } => Self::Validation(e.to_string()),
            GridTooCoarse { .. }
            | TailBoundExceedsTol { .. }
            | ValidationFailure { .. }
            | SingularStep(_)
            | UnsupportedOrder(_) => Self::Numerical(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Parse(_) | ConfigError::Missing(_) | ConfigError::Invalid(_) => {
                Self::Usage(e.to_string())
            }
            ConfigError::Model(_) | ConfigError::Matrix(_) => Self::Validation(e.to_string()),
            ConfigError::Grid(g) => g.into(),
        }
    }
}

impl From<ChannelError> for CliError {
    fn from(e: ChannelError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Product(_) => Self::Numerical(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<ScalarError> for CliError {
    fn from(e: ScalarError) -> Self {
        match e {
            ScalarError::Grid(g) => g.into(),
            ScalarError::ValueEscape { .. } | ScalarError::NonRealReconstruction { .. } => {
                Self::Numerical(e.to_string())
            }
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<AsymptoticsError> for CliError {
    fn from(e: AsymptoticsError) -> Self {
        match e {
            AsymptoticsError::Solver(v) => v.into(),
            _ => Self::Validation(e.to_string()),
        }
    }
}
