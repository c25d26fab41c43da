use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Pipeline stage a failure originated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Erase,
    Inject,
    Adjust,
    Generate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Erase => "stage 1 (erasure)",
            Stage::Inject => "stage 2 (injection)",
            Stage::Adjust => "stage 3 (noise adjustment)",
            Stage::Generate => "stage 4 (generation)",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every dimension must be positive and the shape non-empty")]
    InvalidShape(Vec<usize>),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("timestep {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("non-finite value encountered at step {step}")]
    NonFinite { step: usize },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("model contract violated: {0}")]
    Contract(String),
    #[error("{stage}: {source}")]
    Staged { stage: Stage, source: Box<Error> },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn at(self, stage: Stage) -> Self {
        Error::Staged { stage, source: Box::new(self) }
    }
}
