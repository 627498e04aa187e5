use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("codebook capacity {capacity} is infeasible for k = {k} (at most {max} codes)")]
    Capacity {
        k: usize,
        capacity: usize,
        max: u128,
    },

    #[error("codebook exhausted after {drawn} labels; regenerate it with a larger capacity")]
    CodebookExhausted { drawn: usize },

    #[error("{what} not found: {key}")]
    NotFound { what: &'static str, key: String },

    #[error("{what} {value} out of range [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: usize,
        lo: usize,
        hi: usize,
    },

    #[error("duplicate id {0}")]
    Duplicate(u64),

    #[error("inconsistent state: {0}")]
    Consistency(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("average precision is undefined without relevant items")]
    UndefinedAp,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse grouping of errors, used by the command line for messages and exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Config,
    Capacity,
    Lookup,
    Consistency,
    Data,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidInput(_) | Error::Dimension { .. } | Error::Format(_) => {
                ErrorCategory::Input
            }
            Error::InvalidConfig(_) | Error::Range { .. } => ErrorCategory::Config,
            Error::Capacity { .. } | Error::CodebookExhausted { .. } => ErrorCategory::Capacity,
            Error::NotFound { .. } | Error::Duplicate(_) => ErrorCategory::Lookup,
            Error::Consistency(_) => ErrorCategory::Consistency,
            Error::InsufficientData(_) | Error::UndefinedAp => ErrorCategory::Data,
            Error::Io(_) => ErrorCategory::Io,
        }
    }

    pub(crate) fn dim(expected: usize, found: usize) -> Self {
        Error::Dimension { expected, found }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorCategory::Input => "input",
            ErrorCategory::Config => "config",
            ErrorCategory::Capacity => "capacity",
            ErrorCategory::Lookup => "lookup",
            ErrorCategory::Consistency => "consistency",
            ErrorCategory::Data => "data",
            ErrorCategory::Io => "io",
        };
        f.write_str(s)
    }
}
