use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("near-singular weight update at node {node} (|1 - u h v| = {gap:e})")]
    NearSingularWeight { node: usize, gap: f64 },

    #[error("singular transmitter denominator at node {node}")]
    SingularDenominator { node: usize },

    #[error("infinite rate at node {node}: zero interference-plus-noise with positive signal")]
    InfiniteRate { node: usize },

    #[error("degenerate denominator {quantity} at layer {layer}, node {node}")]
    DegenerateDenominator {
        quantity: &'static str,
        layer: usize,
        node: usize,
    },

    #[error("normalized variation undefined for an all-zero clean allocation")]
    UndefinedMetric,

    #[error("non-finite loss at epoch {epoch}, batch {batch} (parameter norm {param_norm:e})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        param_norm: f64,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(expected: impl Into<String>, found: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            found: found.into(),
        }
    }

    /// True for the numeric failure modes (as opposed to bad arguments).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NearSingularWeight { .. }
                | Error::SingularDenominator { .. }
                | Error::InfiniteRate { .. }
                | Error::DegenerateDenominator { .. }
                | Error::UndefinedMetric
                | Error::NonFiniteLoss { .. }
        )
    }
}
