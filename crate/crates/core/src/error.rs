use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A value left the range where exact integer arithmetic is available.
    #[error("range error: {0}")]
    Range(String),

    /// An enumeration would exceed the configured resource cap.
    #[error("resource cap exceeded: {what} needs {needed} items, cap is {cap}")]
    Resource {
        what: &'static str,
        needed: u128,
        cap: u128,
    },

    #[error("domain error: {name} = {value} ({reason})")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("stick-breaking did not reach tolerance within {cap} sticks")]
    IterationCap { cap: usize },

    /// Every gamma variate in a normalization underflowed to zero.
    #[error("normalizing total is zero ({0})")]
    ZeroTotal(&'static str),

    #[error("parameter mismatch: {0}")]
    ParameterMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}
