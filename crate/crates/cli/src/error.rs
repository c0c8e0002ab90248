use std::path::{Path, PathBuf};

use lowrank_markov::Error;

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Input { path: PathBuf, source: Error },

    #[error(transparent)]
    Library(#[from] Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_owned(), source }
    }

    pub fn input(path: &Path, source: Error) -> Self {
        CliError::Input { path: path.to_owned(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Input { source, .. } | CliError::Library(source) => match source {
                Error::Convergence { .. } | Error::RankFailure { .. } => EXIT_CONVERGENCE,
                Error::Parse { .. } => EXIT_IO,
                Error::InvalidInput(_) | Error::Domain(_) | Error::EmptyResult(_) => EXIT_USAGE,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::io(Path::new("a"), io).exit_code(), EXIT_IO);
        let conv = Error::Convergence { message: String::new(), iterations: 1, residual: 1.0, report: None };
        assert_eq!(CliError::from(conv).exit_code(), EXIT_CONVERGENCE);
        let parse = Error::Parse { line: 3, message: String::new() };
        assert_eq!(CliError::input(Path::new("t"), parse).exit_code(), EXIT_IO);
        assert_eq!(CliError::from(Error::InvalidInput(String::new())).exit_code(), EXIT_USAGE);
    }
}
