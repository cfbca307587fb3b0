//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A shape precondition failed (dimensions that must conform do not).
    ShapeMismatch(String),
    /// A numeric domain precondition failed (negative probability,
    /// non-positive temperature, log of a non-positive value, ...).
    Domain(String),
    /// An operation produced a non-finite value.
    NonFinite(String),
    /// A structural precondition failed (empty input, overlapping variable
    /// sets, batch smaller than the expert count, ...).
    Invalid(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Invalid(m) => write!(f, "invalid input: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
