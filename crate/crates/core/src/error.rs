use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("eigenvalue iteration did not converge within {iterations} iterations")]
    EigNoConvergence { iterations: usize },

    #[error("SVD iteration did not converge")]
    SvdNoConvergence,

    #[error("integration did not reach tolerance: estimate {estimate:.3e} after {subdivisions} subdivisions")]
    Integration { estimate: f64, subdivisions: usize },

    #[error("integration failed for Gramian entry ({row}, {col}): {source}")]
    GramianEntry {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("B is effectively singular (sigma_min/sigma_max = {ratio:.3e}); use the regularized quotient")]
    SingularGramian { ratio: f64 },

    #[error("B is singular beyond cutoff for n = {n}")]
    SingularAtN { n: usize },

    #[error("signal indistinguishable from zero at epsilon = {epsilon:e}")]
    ZeroRank { epsilon: f64 },

    #[error("fold grid too short: {len} samples, need at least {required} (2n-1)")]
    GridTooShort { len: usize, required: usize },

    #[error("fold grid is not {0}")]
    NonUniformGrid(&'static str),

    #[error("derivative signal required")]
    MissingDerivative,

    #[error("minimal function is not invertible on [{a}, {b}]: {reason}")]
    NotInvertible { a: f64, b: f64, reason: String },

    #[error("weight expression: {0}")]
    Parse(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Format(String),
}
