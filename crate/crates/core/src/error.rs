use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing pair: {0}")]
    MissingPair(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("value outside the loss domain: {0}")]
    Domain(String),
    #[error("feature structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("mode mismatch: {0}")]
    Mode(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed weights: {0}")]
    WeightsFormat(String),
    #[error("weights checksum mismatch: {0}")]
    Checksum(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("only one class present: {0}")]
    SingleClass(String),
    #[error("no positive pixels: {0}")]
    NoPositive(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
}

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
