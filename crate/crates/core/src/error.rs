use thiserror::Error;

use crate::objectives::StepReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("shape mismatch at node {node} ({op}): {detail}")]
    NodeShape { node: usize, op: &'static str, detail: String },

    #[error("domain violation at node {node} ({op}): {detail}")]
    Domain { node: usize, op: &'static str, detail: String },

    #[error("unbound graph input `{0}`")]
    UnboundInput(String),

    #[error("backward called before forward")]
    NotEvaluated,

    #[error("expected a scalar output, got {rows}x{cols}")]
    NonScalar { rows: usize, cols: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("support mismatch: {0} vs {1}")]
    SupportMismatch(usize, usize),

    #[error("undefined conditional: aggregated mass of z={0} is zero")]
    UndefinedConditional(usize),

    #[error("infinite divergence in `{0}`: zero entry where strict positivity is required")]
    InfiniteDivergence(&'static str),

    #[error("idx: bad magic number 0x{0:08X}")]
    IdxBadMagic(u32),

    #[error("idx: truncated payload, expected {expected} bytes, found {found}")]
    IdxTruncated { expected: usize, found: usize },

    #[error("idx: dimension product overflows")]
    IdxDimensionOverflow,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {}", .0.step)]
    NonFinite(Box<StepReport>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
