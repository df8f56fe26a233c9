use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: input {value:e} lies inside the numeric guard band")]
    Domain { op: &'static str, value: f64 },

    #[error("non-finite value in leaf tensor at index {index}")]
    NonFinite { index: usize },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("integration diverged at step {step} (state norm {norm:e})")]
    Divergence { step: usize, norm: f64 },

    #[error("step size underflow at t = {t} (h = {step:e})")]
    Stiffness { t: f64, step: f64 },

    #[error("boundary sampler failed: no direction converged (worst residual {worst:e})")]
    SamplerFailure { worst: f64 },

    #[error("degenerate search direction between anchors {from} and {to}")]
    DegenerateDirection { from: usize, to: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
