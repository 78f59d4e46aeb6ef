use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no certificate found; try larger kappa ({0})")]
    NoCertificate(String),

    #[error("ill-conditioned regression matrix (condition number {cond:.3e}); use a larger lambda")]
    IllConditioned { cond: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("region may be empty or too thin: {0}")]
    EmptyRegion(String),

    #[error("region not full-dimensional: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("closed loop unstable at t={t}: |x| = {norm:.3e}")]
    Unstable { t: usize, norm: f64 },

    #[error("wall-clock budget of {secs} s exceeded at t={t}")]
    Budget { secs: u64, t: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Dimension(format!("{what}: expected {want}, got {got}")))
    }
}
