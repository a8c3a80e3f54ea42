use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, unknown config keys or out-of-range settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file. `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Not enough structure in the data (too few peaks, flat trace, ...).
    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("generation error: {0}")]
    Generation(String),

    /// NaN, singular systems, quadrature that would not converge.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Every start of a multi-start fit failed.
    #[error("all {} fit starts failed: {}", .0.len(), .0.join("; "))]
    AllStartsFailed(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Io(_) => 2,
            Error::Analysis(_) | Error::Initialization(_) | Error::AllStartsFailed(_) => 3,
            Error::Generation(_) => 2,
            Error::Numerical(_) => 4,
        }
    }
}
