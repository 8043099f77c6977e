use thiserror::Error;

/// Errors raised by the geometry, loss and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated by its inputs.
    #[error("contract violation in {op}: {msg}")]
    Contract { op: &'static str, msg: String },

    /// A forward value reachable from the loss was NaN or infinite.
    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFinite { op: &'static str, node: usize },

    /// Finite-difference evaluation hit a non-finite objective value.
    #[error("non-finite objective while perturbing `{tag}`[{coord}]")]
    NonFiniteProbe { tag: String, coord: usize },

    /// A binary file did not match its declared layout.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Error {
    Error::Contract {
        op,
        msg: msg.into(),
    }
}
