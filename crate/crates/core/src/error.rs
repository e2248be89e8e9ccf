use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("layer state: {0}")]
    State(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::NonFiniteGradient(_))
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}
pub(crate) use shape_err;
