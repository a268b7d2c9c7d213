use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid chain/ladder geometry (odd site count, bad bond, ...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Invalid argument (empty grid, zero shots, bad probability, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// The request exceeds what this backend can do; the message names the
    /// alternative when one exists.
    #[error("capability error: {0}")]
    Capability(String),

    /// Operands with incompatible sizes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An iterative solver ran out of its sweep/iteration budget.
    #[error("did not converge: {message} (last energy: {last_energy:?})")]
    Convergence {
        message: String,
        last_energy: Option<f64>,
    },

    /// Nonlinear fit failed; the message carries diagnostics.
    #[error("fit error: {0}")]
    Fit(String),

    /// Assignment matrix too ill-conditioned to invert reliably.
    #[error("assignment matrix ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    /// A bond required calibration data that was not supplied.
    #[error("missing calibration for bond ({0}, {1})")]
    MissingCalibration(usize, usize),

    /// Configuration file or flag validation failure.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
