use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped so the CLI can map them onto exit codes: input and
/// contract violations are validation errors, the rest are runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("label out of range: label {label} >= {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("duplicate sample id {0}")]
    DuplicateId(u64),

    #[error("dataset has no labels")]
    Unlabeled,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kernel bandwidth must be positive and finite, got {0}")]
    InvalidGamma(f64),

    #[error("empty selection")]
    EmptySelection,

    #[error("index {0} is already selected")]
    AlreadySelected(usize),

    #[error("index {index} out of range for pool of {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("confidence {0} outside (0, 1]")]
    InvalidConfidence(f64),

    #[error("need at least two classes for a margin, got {0}")]
    TooFewClasses(usize),

    #[error("budget {budget} exceeds pool of {pool}")]
    BudgetExceedsPool { budget: usize, pool: usize },

    #[error("uncovered class {class}: estimated target mass is positive but the source has no samples")]
    UncoveredClass { class: usize },

    #[error("zero-norm {0} in cosine classifier")]
    ZeroNorm(&'static str),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid synthetic domain spec: {0}")]
    InvalidSpec(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures that happen while a valid request executes
    /// (divergence, uncovered classes, IO) rather than for bad input.
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Diverged { .. }
                | Error::UncoveredClass { .. }
                | Error::ZeroNorm(_)
                | Error::Json(_)
        )
    }
}
