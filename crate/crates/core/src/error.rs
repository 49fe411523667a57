use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dataset failed validation with {violations} violation(s); first: record {first_index} ({first_rule})")]
    InvalidDataset {
        violations: usize,
        first_index: usize,
        first_rule: String,
    },

    #[error("{model} did not converge after {iterations} iterations (gradient inf-norm {grad_norm:.3e})")]
    Convergence {
        model: &'static str,
        iterations: usize,
        grad_norm: f64,
    },

    #[error("{0}")]
    Divergence(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("nuisance fit failed in fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("replication {index} failed: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_fold(self, fold: usize) -> Error {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_replication(self, index: usize) -> Error {
        Error::Replication {
            index,
            source: Box::new(self),
        }
    }
}
