use thiserror::Error;

/// Failures surfaced by the numerical layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// State norm exceeded the guard or became non-finite.
    #[error("blow-up at t = {time}: norm {norm}")]
    BlowUp { time: f64, norm: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fields live on different grids ({left} vs {right} points)")]
    GridMismatch { left: usize, right: usize },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("did not converge: {0}")]
    NotConverged(String),
    #[error("outside admissible range: {0}")]
    Domain(String),
}

impl Error {
    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::BlowUp { .. } | Error::Singular(_) | Error::NotConverged(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
