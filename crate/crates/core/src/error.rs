use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is not column-orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),

    #[error("subspace meets the null space: smallest singular value of X·B is {smallest:.3e}, threshold {threshold:.3e}")]
    RankDeficient { smallest: f64, threshold: f64 },

    #[error("filtered matrix is identically zero")]
    ZeroMatrix,

    #[error("no feasible (subset, dimension) pair")]
    NoFeasibleSelection,

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("projection degenerated after {0} resampling attempts")]
    Degenerate(usize),

    #[error("matching infeasible: {components} components cannot cover total signal rank {required}")]
    CapacityInfeasible { components: usize, required: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
