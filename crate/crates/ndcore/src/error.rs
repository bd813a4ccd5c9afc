use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A precondition of an operation does not hold (shapes, masks, indices).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A forward value or gradient became NaN or infinite.
    #[error("non-finite value produced by `{op}` (node {node})")]
    Numeric { op: &'static str, node: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
