use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Solver(#[from] dlra_hjb::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        CliError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for bad input (config, files, checkpoints), 2 for failures of the
    /// numerical method.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(e) if is_input_error(e) => 1,
            CliError::Solver(_) => 2,
            _ => 1,
        }
    }
}

fn is_input_error(e: &dlra_hjb::Error) -> bool {
    use dlra_hjb::Error;
    match e {
        Error::Parameter(_) | Error::Format(_) | Error::Io(_) => true,
        Error::Interval { source, .. } => is_input_error(source),
        _ => false,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 1);
        assert_eq!(CliError::from(dlra_hjb::Error::Format("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(dlra_hjb::Error::Numeric("x".into())).exit_code(), 2);
        let nested = dlra_hjb::Error::Interval {
            interval: 3,
            source: Box::new(dlra_hjb::Error::BlowUp { step: 1, time: 0.1 }),
        };
        assert_eq!(CliError::from(nested).exit_code(), 2);
    }
}
