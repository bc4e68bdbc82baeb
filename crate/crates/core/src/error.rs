use thiserror::Error;

/// Everything that can go wrong in the library.
///
/// Errors fall into three families that the CLI maps to exit codes:
/// parse errors (2), semantic errors (3) and numeric errors (4).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Semantic(String),

    #[error("infeasible interval distribution at {state} under action {action}: {detail}")]
    InfeasibleBounds {
        state: String,
        action: String,
        detail: String,
    },

    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("lower bound {lower} exceeds upper bound {upper}")]
    InvertedBounds { lower: f64, upper: f64 },

    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: "<input>".to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// Replaces the placeholder file name of a parse error.
    pub fn with_file(self, name: &str) -> Self {
        match self {
            Error::Parse { line, msg, .. } => Error::Parse {
                file: name.to_string(),
                line,
                msg,
            },
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Io(_) => 2,
            Error::Semantic(_) => 3,
            Error::InfeasibleBounds { .. } | Error::NoConvergence { .. } | Error::InvertedBounds { .. } => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
