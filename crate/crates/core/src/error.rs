use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{qubits} qubits exceeds the dense-matrix cap of {cap} (set QCAV_MAX_QUBITS to raise it)")]
    ResourceLimit { qubits: usize, cap: usize },

    #[error("operator is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPsd { min_eigenvalue: f64 },

    #[error(
        "error operators are too strong to complete the family: I - sum A^dag A has eigenvalue {min_eigenvalue:e}; shrink the couplings"
    )]
    CompletionImpossible { min_eigenvalue: f64 },

    #[error("identity is not in the span of the family (least-squares residual {residual:e})")]
    CanonicalizationImpossible { residual: f64 },

    #[error("family is not complete (residual {residual:e})")]
    IncompleteFamily { residual: f64 },

    #[error("state is outside the code space (projection residual {residual:e})")]
    OutsideCodeSpace { residual: f64 },

    #[error("uncorrectable syndrome pattern {0:?}")]
    UncorrectablePattern(Vec<i8>),

    #[error("numerical failure: {0}")]
    Numerical(String),
}
