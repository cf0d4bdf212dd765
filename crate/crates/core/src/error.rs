use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid composition: {0}")]
    InvalidComposition(String),
    #[error("invalid exchangeability: {0}")]
    InvalidExchangeability(String),
    #[error("invalid rate matrix: {0}")]
    InvalidRateMatrix(String),
    #[error("rate matrix is not reversible: {0}")]
    NotReversible(String),
    #[error("negative branch length {0}")]
    NegativeBranchLength(f64),
    #[error("singular or reducible matrix: {0}")]
    Singular(String),
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("quadratic coefficient {d} outside ({lower}, {upper})")]
    CoefficientOutOfBounds { d: f64, lower: f64, upper: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numerical routine did not converge: {0}")]
    NoConvergence(String),
    #[error("newick parse error at byte {pos}: {msg}")]
    Newick { pos: usize, msg: String },
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("pattern {0} has zero probability under every category")]
    ZeroLikelihood(usize),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
