use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("loss must have shape [1], got {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("motion invariant violated{}: {detail}", location(*.frame, *.joint))]
    Invariant {
        frame: Option<usize>,
        joint: Option<usize>,
        detail: String,
    },
    #[error("skeleton: {0}")]
    Skeleton(String),
    #[error("unknown category \"{0}\"")]
    UnknownCategory(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("embedding store: {0}")]
    Embedding(String),
    #[error("{0}")]
    Domain(String),
}

fn location(frame: Option<usize>, joint: Option<usize>) -> String {
    match (frame, joint) {
        (Some(f), Some(j)) => alloc::format!(" at frame {f}, joint {j}"),
        (Some(f), None) => alloc::format!(" at frame {f}"),
        (None, Some(j)) => alloc::format!(" at joint {j}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidArgument(detail.into())
    }
}
