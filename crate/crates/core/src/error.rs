use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value {value:?} in column `{column}` at line {line}")]
    NonNumeric { line: usize, column: String, value: String },

    #[error("treatment value {value:?} at line {line} is not 0 or 1")]
    InvalidTreatment { line: usize, value: String },

    #[error("degenerate treatment: every unit is in the {0} group")]
    DegenerateTreatment(&'static str),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("outcome vector required but absent")]
    MissingOutcome,

    #[error("simulation oracle required but absent")]
    MissingOracle,

    #[error("non-finite {stage} loss at iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },

    #[error("{method} did not converge after {iterations} iterations (residual norm {norm:.3e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        norm: f64,
    },

    #[error("{0}: singular Jacobian")]
    SingularJacobian(&'static str),

    #[error("no feasible weights: treated moments lie outside the control hull")]
    Infeasible,

    #[error("empty sample")]
    EmptySample,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown method `{0}` (valid: glm, cbps, eb, pcbipm-mmd, pcbipm-sipm, pcbipm-wass, ncbipm-mmd, ncbipm-sipm, ncbipm-wass)")]
    UnknownMethod(String),

    #[error("unknown design `{0}` (valid: ks_linear, ks_nonlinear, ks_small_overlap, heterogeneous)")]
    UnknownDesign(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery itself, as opposed to bad
    /// input or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NoConvergence { .. } | Error::SingularJacobian(_)
        )
    }
}
