use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by model fitting, imputation, and data handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Structural CSV problems: missing header, ragged rows, empty file.
    #[error("csv structure: {0}")]
    Structure(String),

    /// A cell that should be numeric is not. Rows are 1-based data rows
    /// (the header is row 0).
    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    /// A continuous column with fewer than two distinct observed values.
    /// Such a column can still be modeled by declaring it ordinal.
    #[error("column {column}: fewer than two distinct observed values; declare the column ordinal")]
    DegenerateColumn { column: String },

    /// An ordinal level with no observed entries; the cutoff estimator
    /// would produce duplicate cutoffs.
    #[error("column {column}: level {level} of {levels} has no observed entries")]
    UnobservedLevel {
        column: String,
        level: usize,
        levels: usize,
    },

    #[error("{0}")]
    InvalidArgument(String),

    /// The model and the data disagree on shape, names, kinds, or levels.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// Non-finite values or failed factorizations during fitting.
    #[error("numerical failure at iteration {iteration}: {reason}")]
    Numerical { iteration: usize, reason: String },
}

impl Error {
    /// Attach a column name to errors raised below the column level.
    pub fn with_column(self, name: &str) -> Self {
        match self {
            Error::DegenerateColumn { .. } => Error::DegenerateColumn {
                column: name.to_string(),
            },
            Error::UnobservedLevel { level, levels, .. } => Error::UnobservedLevel {
                column: name.to_string(),
                level,
                levels,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
