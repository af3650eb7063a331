use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("quadrature order {0} is outside 1..=200")]
    QuadratureOrder(usize),

    #[error("integrand is not finite at node {node} (value {value})")]
    NonFiniteIntegrand { node: f64, value: f64 },

    #[error("log-likelihood of cluster {cluster} is not finite ({value})")]
    NonFiniteLikelihood { cluster: String, value: f64 },

    #[error("root is not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    InvalidBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("objective is not finite at the initial point")]
    NonFiniteStart,

    #[error("objective became non-finite during the search")]
    NonFiniteObjective { last_good: Vec<f64> },

    #[error("non-finite evaluation while differencing coordinate {0}")]
    NonFiniteDifference(usize),

    #[error("matrix is singular or not positive definite")]
    Singular,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("separation detected: fitted probabilities reach 0 or 1 (coefficient norm {0:.1}); drop sparse terms or accept the boundary fit")]
    Separation(f64),

    #[error("design is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("marginalized size model requires exp(Z alpha) > 1, got Z alpha = {0}")]
    SizeDomain(f64),

    #[error("no validated clusters available")]
    EmptyValidation,

    #[error("iteration limit reached without convergence ({0})")]
    NoConvergence(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("bootstrap failed: {failed} of {resamples} resamples could not be fitted (first: {first})")]
    Bootstrap { failed: usize, resamples: usize, first: String },
}
