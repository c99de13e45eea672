use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(gpsmc::Error),
    #[error("data error: {0}")]
    Data(gpsmc::Error),
    #[error("numerical failure: {0}")]
    Numerical(gpsmc::Error),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Other(gpsmc::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Output { .. } | CliError::Other(_) => 1,
        }
    }

    /// Sorts a library error by the stage it most likely came from.
    pub fn classify(e: gpsmc::Error) -> CliError {
        use gpsmc::Error as E;
        match e {
            E::Config(_) => CliError::Config(e),
            E::Data { .. } | E::Csv(_) | E::StaleModel { .. } => CliError::Data(e),
            E::Numerical { .. } | E::DegenerateWeights => CliError::Numerical(e),
            _ => CliError::Other(e),
        }
    }
}

impl From<gpsmc::Error> for CliError {
    fn from(e: gpsmc::Error) -> Self {
        CliError::classify(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
