use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the range where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The chart or the requested direction is degenerate at the given point.
    #[error("degenerate geometry at u = {location:?}: {reason}")]
    Degenerate { location: Vec<f64>, reason: String },

    /// The discretisation cannot resolve the requested quantity.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// A grid or rule does not fit the manifold it is applied to.
    #[error("configuration error: {0}")]
    Config(String),

    /// Finite-difference step is below the noise floor.
    #[error("step-size error: {0}")]
    StepSize(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn degenerate(location: &[f64], reason: impl Into<String>) -> Self {
        Error::Degenerate {
            location: location.to_vec(),
            reason: reason.into(),
        }
    }
}
