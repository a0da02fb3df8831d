use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty support")]
    EmptySupport,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("exact solver requires uniform equal-size measures")]
    ExactScope,

    #[error("oracle size limit: n = {0} exceeds 8")]
    OracleSizeLimit(usize),

    #[error("cost matrix is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    CostShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },

    #[error("regularization must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("sinkhorn did not converge after {iterations} iterations (marginal residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("sinkhorn divergence {0:.3e} is below the clamp tolerance")]
    NegativeDivergence(f64),

    #[error("pair ({i}, {j}): {source}")]
    Pair {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape {index}: {source}")]
    Shape {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("not a Jordan curve in polar form (radius {radius:.3e} at theta {theta:.6})")]
    NotJordan { theta: f64, radius: f64 },

    #[error("shape generation failed after {0} retries")]
    GenerationRetries(usize),

    #[error("degenerate polygon: zero perimeter")]
    ZeroPerimeter,

    #[error("matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("embedding dimension {k} exceeds the number of positive eigenvalues ({positive_count})")]
    EmbeddingDimension { k: usize, positive_count: usize },

    #[error("embedding bound inapplicable: lambda_k = lambda_(k+1) (eigengap {gap:.3e})")]
    ZeroEigengap { gap: f64 },

    #[error("shape mismatch: {0}")]
    Mismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("parse: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the failure comes from the numerics rather than from the
    /// caller's input or the filesystem.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotConverged { .. }
            | Error::NegativeDivergence(_)
            | Error::EmbeddingDimension { .. } => true,
            Error::Pair { source, .. } | Error::Shape { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_pair(self, i: usize, j: usize) -> Error {
        Error::Pair {
            i,
            j,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_shape(self, index: usize) -> Error {
        Error::Shape {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
