use std::path::PathBuf;

use thiserror::Error;

/// Every failure mode the engine can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("element {element} inverted (det J = {det:.3e} at quadrature point {qp})")]
    InvertedElement { element: usize, qp: usize, det: f64 },

    #[error("meshes are not a nested coarse/fine pair: {0}")]
    MeshMismatch(String),

    #[error("missing boundary tag set: {0}")]
    MissingTag(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("linear system has no Dirichlet constraints and is singular")]
    NoConstraints,

    #[error("{method} did not converge: {iterations} iterations, residual {residual:.3e}")]
    SolverNotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{method} broke down at iteration {iteration} (residual {residual:.3e})")]
    SolverBreakdown {
        method: &'static str,
        iteration: usize,
        residual: f64,
    },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("degenerate local frame at node {node}: {reason}")]
    DegenerateFrame { node: usize, reason: String },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {field} at t = {time:.6} s")]
    NonFinite { field: &'static str, time: f64 },

    #[error(
        "Newton failed to converge after {iterations} iterations (residual {residual:.3e}, load fraction {ramp:.3})"
    )]
    NewtonDiverged {
        iterations: usize,
        residual: f64,
        ramp: f64,
    },

    #[error("singular 2x2 pressure Schur complement (determinant {0:.3e})")]
    SingularSchur(f64),

    #[error("zero weight integral on the base for the {0} term")]
    ZeroBaseWeight(&'static str),

    #[error("reference recovery did not converge; mismatch history (m): {history:?}")]
    ReferenceNotConverged { history: Vec<f64> },

    #[error("target volume unreachable: {0}")]
    Unreachable(String),

    #[error("degenerate elastance fit: {0}")]
    DegenerateFit(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("at t = {time:.6} s: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at(self, time: f64) -> Self {
        match self {
            e @ Error::AtTime { .. } => e,
            e => Error::AtTime {
                time,
                source: Box::new(e),
            },
        }
    }
}
