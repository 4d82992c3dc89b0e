use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requested on a tape with no recorded operations")]
    BackwardBeforeForward,

    #[error("seed gradient shape {seed:?} does not match output shape {output:?}")]
    SeedShape {
        seed: Vec<usize>,
        output: Vec<usize>,
    },

    #[error("{what}: index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: String,
        index: usize,
        size: usize,
    },

    #[error("non-finite loss at {0}")]
    NonFiniteLoss(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse failure category, used by the CLI to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFiniteLoss(_) | Error::Numerical(_) => ErrorClass::Numerical,
            Error::Config(_) | Error::Invalid(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}
