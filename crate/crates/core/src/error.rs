use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("window too short for {op}: need at least {needed} samples, got {got}")]
    WindowTooShort {
        op: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("model build failed: {0}")]
    Build(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical abort at epoch {epoch}, batch {batch} (lr {lr:e}): {reason}")]
    NumericalAbort {
        epoch: usize,
        batch: usize,
        lr: f64,
        reason: String,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
