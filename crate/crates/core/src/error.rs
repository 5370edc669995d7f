use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A quality specification or density table failed validation.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// Likelihood ratio decreases between two points of the support.
    #[error("likelihood ratio not monotone: LR({x}) = {lr_x} > LR({y}) = {lr_y}")]
    MlrpViolation {
        x: f64,
        y: f64,
        lr_x: f64,
        lr_y: f64,
    },

    /// The requested point lies outside the support or where a quantity is undefined.
    #[error("{what} undefined at x = {x}")]
    Domain { what: &'static str, x: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("estimation failed: {0}")]
    Estimation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
