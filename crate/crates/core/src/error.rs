use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Input data violates a physical or numerical precondition.
    #[error("data error: {0}")]
    Data(String),

    #[error("missing measurement records {0:?}")]
    MissingRecords(Vec<(usize, usize, u8)>),

    #[error("missing Bloch coverage for {} Pauli strings (first: {:?})", .0.len(), .0.iter().take(8).collect::<Vec<_>>())]
    Coverage(Vec<String>),

    #[error("metric matrix is ill-conditioned: smallest eigenvalue {min_eigenvalue:.3e}")]
    IllConditioned { min_eigenvalue: f64 },

    #[error("post-selection discarded every shot")]
    EmptyPostselection,

    #[error("Bloch vector has zero norm; cannot purify")]
    DegenerateState,

    #[error("assignment matrix of qubit {0} is singular")]
    SingularAssignment(usize),

    #[error("determinant sector too large ({0} determinants)")]
    SectorTooLarge(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
