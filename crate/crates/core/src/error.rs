//! Error type shared by all core modules.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors surfaced by grid, pipeline, instance, and evaluation operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates an operation's contract.
    InvalidArgument(String),
    /// A region or index falls outside the host grid.
    OutOfBounds(String),
    /// Two grids were expected to share dims/spacing but do not.
    GeometryMismatch(String),
    /// Neither a mask nor the threshold fallback produced a lung region.
    NoLungFound,
    /// Label grid and station table disagree; offenders listed per side.
    InconsistentAnnotation {
        missing_in_table: Vec<u16>,
        missing_in_grid: Vec<u16>,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::OutOfBounds(msg) => write!(f, "out of bounds: {msg}"),
            Error::GeometryMismatch(msg) => write!(f, "geometry mismatch: {msg}"),
            Error::NoLungFound => write!(f, "no lung-like region found"),
            Error::InconsistentAnnotation {
                missing_in_table,
                missing_in_grid,
            } => write!(
                f,
                "annotation inconsistent: labels missing from station table {missing_in_table:?}, \
                 table entries missing from grid {missing_in_grid:?}"
            ),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl fmt::Display) -> Error {
    Error::InvalidArgument(alloc::format!("{msg}"))
}
