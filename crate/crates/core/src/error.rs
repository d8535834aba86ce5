use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix that must be inverted is singular or not finite.
    #[error("numerical degeneracy in {component}")]
    NumericalDegeneracy { component: String },

    /// No injective selection of finite entries covers this row.
    #[error("assignment infeasible: row {row} cannot be matched")]
    Infeasible { row: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
