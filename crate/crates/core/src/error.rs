//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two shapes that must conform do not.
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dim {
        op: &'static str,
        left: String,
        right: String,
    },

    /// A class index outside the label vocabulary.
    #[error("label {label} out of range for {arity} classes in {op}")]
    LabelRange {
        op: &'static str,
        label: usize,
        arity: usize,
    },

    /// Invalid argument or violated invariant.
    #[error("validation: {0}")]
    Validation(String),

    /// Malformed input file content.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A loss or weight stopped being a real number.
    #[error("non-finite {component} at step {step}")]
    NonFinite { component: String, step: usize },

    /// File I/O failure with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(op: &'static str, left: impl std::fmt::Debug, right: impl std::fmt::Debug) -> Self {
        Error::Dim {
            op,
            left: format!("{left:?}"),
            right: format!("{right:?}"),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
