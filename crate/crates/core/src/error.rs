use thiserror::Error;

#[derive(Debug, Error)]
pub enum DmdError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("need at least {required} snapshots, got {got}")]
    TooFewSnapshots { required: usize, got: usize },

    #[error("column {0} of the past-snapshot matrix has zero norm")]
    ZeroColumn(usize),

    #[error("requested rank {requested} exceeds the numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("rank-deficient least-squares system: smallest singular value {smallest:e}, largest {largest:e}")]
    SingularSystem { smallest: f64, largest: f64 },

    #[error("eigendecomposition is defective: eigenvector matrix condition estimate {condition:e}")]
    Defective { condition: f64 },

    #[error("{0} did not converge")]
    NoConvergence(&'static str),

    #[error("ambiguous conjugate pairing for eigenvalue {index}: candidates {candidates:?}")]
    AmbiguousPairing { index: usize, candidates: Vec<usize> },

    #[error("mode selection is empty")]
    EmptySelection,

    #[error("mode set is not closed under conjugation: mode {mode} lacks partner {partner}")]
    NotConjugateClosed { mode: usize, partner: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DmdError {
    /// True for failures of the numerics rather than of the inputs or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            DmdError::RankDeficient { .. }
                | DmdError::SingularSystem { .. }
                | DmdError::Defective { .. }
                | DmdError::NoConvergence(_)
                | DmdError::ZeroColumn(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, DmdError::Io(_))
    }
}

pub type Result<T, E = DmdError> = std::result::Result<T, E>;
