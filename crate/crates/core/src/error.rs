//! Error taxonomy shared by every module in the crate.

use alloc::string::String;

/// Crate-wide error type.
///
/// The variants mirror the failure classes surfaced by the pipeline: shape
/// and contract violations are caller bugs or bad inputs, numeric and
/// training errors indicate a run that went off the rails, schedule errors
/// mean a corruption schedule could not be constructed.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("schedule error: {0}")]
    Schedule(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn lookup(msg: impl Into<String>) -> Self {
        Error::Lookup(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }
    pub fn schedule(msg: impl Into<String>) -> Self {
        Error::Schedule(msg.into())
    }
}
