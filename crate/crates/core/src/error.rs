use thiserror::Error;

#[derive(Debug, Error)]
pub enum DymlError {
    #[error("NestingViolation: {0}")]
    NestingViolation(String),
    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),
    #[error("DimensionMismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("DegenerateEmbedding: cannot normalize a zero vector")]
    DegenerateEmbedding,
    #[error("InvalidDimension: {0}")]
    InvalidDimension(String),
    #[error("MissingProxy: {0}")]
    MissingProxy(String),
    #[error("MarginOrderViolation: {0}")]
    MarginOrderViolation(String),
    #[error("EmptyBatch")]
    EmptyBatch,
    #[error("InsufficientPairs: {0}")]
    InsufficientPairs(String),
    #[error("DegenerateScale: {0}")]
    DegenerateScale(String),
    #[error("UnknownProxyId: {0}")]
    UnknownProxyId(usize),
    #[error("InsufficientClasses: {0}")]
    InsufficientClasses(String),
    #[error("NonFiniteLoss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("EmptyGallery")]
    EmptyGallery,
    #[error("EmptyDataset")]
    EmptyDataset,
    #[error("DepthOutOfRange: depth {depth} not in 1..={len}")]
    DepthOutOfRange { depth: usize, len: usize },
    #[error("NotPermutations: {0}")]
    NotPermutations(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("Format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DymlError {
    /// Configuration problems map to exit code 2, everything else to 3.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            DymlError::InvalidSpec(_)
                | DymlError::InvalidConfig(_)
                | DymlError::MarginOrderViolation(_)
                | DymlError::NestingViolation(_)
                | DymlError::InvalidDimension(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, DymlError>;
