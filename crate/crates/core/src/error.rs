use thiserror::Error;

#[derive(Debug, Error)]
pub enum PollError {
    #[error("unstable system: total utilization {rho} must be below 1")]
    Unstable { rho: f64 },
    #[error("total mean switch-over time is zero; the analytic engine needs E(S) > 0")]
    ZeroSwitchover,
    #[error("malformed system: {0}")]
    BadShape(String),
    #[error("transform argument {0} has negative real part")]
    Domain(String),
    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("band [{lower}, {upper}) carries probability {probability:e}, below 1e-12")]
    EmptyBand { lower: f64, upper: f64, probability: f64 },
    #[error("infinite product truncated after {terms} terms with tail bound {tail_bound:e}")]
    Truncation { terms: usize, tail_bound: f64 },
    #[error("intervisit routes disagree by {0:e}")]
    RouteMismatch(f64),
    #[error("equivalent forms of {what} disagree by {difference:e}")]
    FormMismatch { what: &'static str, difference: f64 },
    #[error("numerical derivative is ill-conditioned (extrapolation spread {0:e})")]
    IllConditioned(f64),
    #[error("inversion accuracy target missed: error estimate {0:e}")]
    Accuracy(f64),
    #[error("distribution family {0} does not support threshold truncation")]
    UnsupportedFamily(&'static str),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = PollError> = std::result::Result<T, E>;
