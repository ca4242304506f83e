use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error at line {line}: {msg}")]
    Validation { line: usize, msg: String },

    #[error("integration failed at t = {t}: {msg}")]
    Integration { t: f64, msg: String },

    #[error("fit failed for {country}: {source}")]
    Fit {
        country: String,
        #[source]
        source: Box<Error>,
    },

    #[error("country {0} has no metadata")]
    MissingCountry(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Integration { .. } => true,
            Error::Fit { source, .. } | Error::File { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Process exit code: 1 for numerical failures, 2 for input/validation errors.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            1
        } else {
            2
        }
    }
}
