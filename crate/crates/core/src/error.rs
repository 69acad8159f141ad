use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("header mismatch in {path}: expected [{expected}], found [{found}]")]
    HeaderMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}: row {row}, column {column}: cannot parse {value:?} as a number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column {column}: value {value} violates coding ({expected})")]
    Coding {
        row: usize,
        column: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("{path}: file has a header but no data rows")]
    EmptyBody { path: PathBuf },

    #[error("{path}: expected {expected} data rows, found {found}")]
    RowCount {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate transform: latent outcome has zero spread (sigma_y = 0 and constant mean surface)")]
    DegenerateTransform,

    #[error("no treated units: ATT is undefined")]
    NoTreatedUnits,

    #[error("inverted interval: lower {lower} > upper {upper}")]
    InvertedInterval { lower: f64, upper: f64 },

    #[error("index {index} out of range for {len} units")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{0}")]
    Validation(String),
}

/// Coarse classes used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Validation,
    Io,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        match source.kind() {
            csv::ErrorKind::Io(_) => {
                let path = path.into();
                match source.into_kind() {
                    csv::ErrorKind::Io(e) => Error::Io { path, source: e },
                    _ => unreachable!(),
                }
            }
            _ => Error::Csv {
                path: path.into(),
                source,
            },
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Config(_) => ErrorClass::Config,
            _ => ErrorClass::Validation,
        }
    }
}
