use nalgebra::DMatrix;
use thiserror::Error;

/// Errors produced by model construction, filtering and analysis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("noise shaping matrix D of node {node} is singular")]
    SingularNoise { node: usize },

    #[error("node index {index} out of range for a network of {len} nodes")]
    NodeOutOfRange { index: usize, len: usize },

    #[error("adjacency matrix is invalid: {0}")]
    InvalidAdjacency(String),

    #[error("risk sensitivity parameter {theta} outside [0, {bound})")]
    ThetaOutOfDomain { theta: f64, bound: f64 },

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: String },

    #[error("innovation covariance could not be factorized (condition number {condition:e})")]
    InnovationSingular { condition: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {change:e})")]
    NotConverged {
        iterations: usize,
        change: f64,
        last_iterate: DMatrix<f64>,
    },

    #[error("K_t lost positive definiteness at t = {t}; tolerance too large for this horizon")]
    LeastFavorableBreakdown { t: usize },

    #[error("consensus parameter {epsilon} outside (0, {max}]")]
    EpsilonOutOfRange { epsilon: f64, max: f64 },

    #[error("node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("neighborhood of node {node} is not observable (covers coordinates {covered:?})")]
    LocalUnobservable { node: usize, covered: Vec<usize> },

    #[error("network generation failed after {attempts} attempts: {hint}")]
    NetworkGeneration { attempts: usize, hint: String },

    #[error("empty averaging window [{start}, {end}) for a horizon of {len} samples")]
    EmptyWindow { start: usize, end: usize, len: usize },

    #[error("filter `{label}`: {source}")]
    Variant {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    pub(crate) fn dims(what: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn not_pd(what: impl Into<String>) -> Self {
        Error::NotPositiveDefinite { what: what.into() }
    }

    pub(crate) fn at_node(self, node: usize) -> Self {
        Error::Node {
            node,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_variant(self, label: &str) -> Self {
        Error::Variant {
            label: label.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
