use alloc::string::String;

/// Errors raised anywhere in the core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("attention row {row} has no attendable position")]
    FullyMasked { row: usize },
    #[error("backward requires a scalar loss, got {0} elements")]
    NonScalarLoss(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("degenerate 6D rotation input: {0}")]
    DegenerateRotation(&'static str),
    #[error("not a rotation matrix: {0}")]
    InvalidRotation(String),
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error("grounding error: {0}")]
    Grounding(String),
    #[error("infeasible structure: {0}")]
    Infeasible(String),
    #[error("placement failed after {tries} tries")]
    Placement { tries: usize },
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;
