use thiserror::Error;

/// Errors raised by the estimator, the manifold tracer and the analysis harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(
        "Gram matrix not factorizable with jitter <= {jitter_max:e} \
         (n = {n}, min separation = {min_separation:e})"
    )]
    Conditioning {
        n: usize,
        min_separation: f64,
        jitter_max: f64,
    },

    #[error("matrix is not Hurwitz (max eigenvalue real part {max_real_part:e})")]
    NotHurwitz { max_real_part: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("state became non-finite at t = {time}")]
    Divergence { time: f64 },

    #[error("orbit did not close: {0}")]
    NotClosed(String),

    #[error("level-set accuracy lost: |phi - c| = {drift:e} exceeds {tolerance:e}")]
    Accuracy { drift: f64, tolerance: f64 },

    #[error("polyline too coarse: {requested} samples requested, at most {max} supported")]
    Resolution { requested: usize, max: usize },

    #[error("slope fit failed: {0}")]
    Fit(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
