use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: edge ({src}, {dst}) with n = {n}")]
    EdgeOutOfRange { src: usize, dst: usize, n: usize },

    #[error("no edges")]
    NoEdges,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension {n} exceeds the dense solver cap {cap}")]
    DimensionCap { n: usize, cap: usize },

    #[error("lanczos did not converge after {iterations} iterations (worst residual {worst_residual:e}, residuals {residuals:?})")]
    NoConvergence {
        iterations: usize,
        worst_residual: f64,
        residuals: Vec<f64>,
    },

    #[error(
        "requested {requested} eigenpairs from the {band} band but only {available} are stored"
    )]
    BandTooSmall {
        band: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("rank deficient least-squares system (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("assumption violated: eigenvalues are not pairwise distinct (duplicate {0})")]
    SpectrumNotDistinct(f64),

    #[error("assumption violated: support {index} has {size} points, needs more than {min}")]
    SupportTooSmall {
        index: usize,
        size: usize,
        min: usize,
    },

    #[error("assumption violated: supports {0} and {1} overlap")]
    SupportsOverlap(usize, usize),

    #[error("assumption violated: adaptive degree {k_prime} exceeds global degree {k}")]
    DegreeOrder { k: usize, k_prime: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("splits overlap: node {index} appears in both {first} and {second}")]
    OverlappingSplits {
        index: usize,
        first: &'static str,
        second: &'static str,
    },

    #[error("label error: {0}")]
    Label(String),

    #[error("bad eigen cache: {0}")]
    Cache(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted at epoch {epoch}: {reason}")]
    TrainingAborted {
        epoch: usize,
        reason: String,
        losses: Vec<f64>,
    },

    #[error("no feasible configuration after {0} samples")]
    NoFeasibleConfig(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
