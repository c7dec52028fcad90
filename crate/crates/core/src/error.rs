use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss does not depend on any trainable tensor")]
    Detached,
    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unmapped NDC code {0}")]
    UnmappedNdc(String),
    #[error("unknown {kind} code {code:?}")]
    UnknownCode { kind: &'static str, code: String },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("too few records: need at least {need}, got {got}")]
    TooFewRecords { need: usize, got: usize },
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}
