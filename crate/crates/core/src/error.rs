use thiserror::Error;

use crate::lattice::LatticeVector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rank mismatch: expected {expected}, got {got}")]
    RankMismatch { expected: usize, got: usize },

    #[error("vector {vector:?} lies outside the window {window}")]
    OutOfWindow { vector: Vec<i64>, window: String },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("precondition violated: {what} (witness: {witness})")]
    Precondition { what: String, witness: String },

    #[error("smallness budget exceeded: no distance satisfies the ball condition at point {point} ({hits} translates hit)")]
    SmallnessBudget { point: usize, hits: usize },

    #[error("colouring infeasible for the ball around point {center}: every block is hit (blocking translates {blocking:?})")]
    ColoringInfeasible {
        center: usize,
        blocking: Vec<Vec<i64>>,
    },

    #[error("postcondition failed: {0}")]
    Postcondition(String),

    #[error("marker construction failed at fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("deficient tower sum {value} < 1 at point {point}")]
    DeficientSum { point: usize, value: String },

    #[error("insufficient padding: operator band width {band} exceeds padding {pad}")]
    InsufficientPadding { band: usize, pad: usize },

    #[error("pair {index} is not orthogonal: |ab| = {norm:e}")]
    NotOrthogonal { index: usize, norm: f64 },

    #[error("serialization: {0}")]
    Serde(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable code used in run reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "E_PARAM",
            Error::RankMismatch { .. } => "E_RANK",
            Error::OutOfWindow { .. } => "E_WINDOW",
            Error::InvalidSystem(_) => "E_SYSTEM",
            Error::Precondition { .. } => "E_PRECONDITION",
            Error::SmallnessBudget { .. } => "E_SMALLNESS",
            Error::ColoringInfeasible { .. } => "E_COLORING",
            Error::Postcondition(_) => "E_POSTCONDITION",
            Error::Fold { source, .. } => source.code(),
            Error::Verification(_) => "E_VERIFY",
            Error::DeficientSum { .. } => "E_DEFICIENT_SUM",
            Error::InsufficientPadding { .. } => "E_PADDING",
            Error::NotOrthogonal { .. } => "E_ORTHOGONALITY",
            Error::Serde(_) => "E_SERDE",
            Error::Io(_) => "E_IO",
        }
    }

    pub(crate) fn out_of_window(v: &LatticeVector, window: impl Into<String>) -> Self {
        Error::OutOfWindow {
            vector: v.coords().to_vec(),
            window: window.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
