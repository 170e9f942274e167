//! Error type shared across the crate.

use std::fmt;

/// Errors produced by validation, solvers, and file I/O.
#[derive(Debug)]
pub enum Error {
    /// Tensor or grid dimensions do not line up (divisibility, shape, size).
    DimensionMismatch(String),
    /// An index is outside its valid range.
    IndexOutOfRange { what: &'static str, index: usize, limit: usize },
    /// A retained-length value is outside [0, M].
    LengthOutOfRange { block: usize, length: usize, max: usize },
    /// Two objects that must share a shape or grid do not.
    ShapeMismatch(String),
    /// A codebook with zero entries was supplied.
    EmptyCodebook,
    /// An attention query row has no allowed key positions.
    EmptyAttentionRow(usize),
    /// The exact batch budget cannot be met by any assignment on the grid.
    InfeasibleBudget {
        requested: usize,
        nearest_below: Option<usize>,
        nearest_above: Option<usize>,
    },
    /// A packed sequence does not contain the expected number of block markers.
    MarkerCount { expected: usize, found: usize },
    /// A token id falls outside the declared vocabulary layout.
    IdOutOfVocab { id: u32, limit: u32 },
    /// A block id sequence exceeds the per-block capacity.
    LengthOverflow { block: usize, length: usize, max: usize },
    /// A probability vector is malformed (wrong size, negative, or not normalized).
    InvalidDistribution(String),
    /// A configuration or CLI parameter failed validation.
    InvalidParam(String),
    /// Exhaustive verification was requested on an instance above the size limit.
    ExhaustiveLimit { batch: usize, limit: usize },
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// A file did not parse as the expected format.
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::IndexOutOfRange { what, index, limit } => {
                write!(f, "{what} index {index} out of range (limit {limit})")
            }
            Error::LengthOutOfRange { block, length, max } => {
                write!(f, "length {length} for block {block} outside [0, {max}]")
            }
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::EmptyCodebook => write!(f, "codebook has no entries"),
            Error::EmptyAttentionRow(r) => {
                write!(f, "attention row {r} has no allowed positions")
            }
            Error::InfeasibleBudget { requested, nearest_below, nearest_above } => {
                write!(f, "total budget {requested} is not reachable on the grid")?;
                if let Some(b) = nearest_below {
                    write!(f, "; nearest feasible below: {b}")?;
                }
                if let Some(a) = nearest_above {
                    write!(f, "; nearest feasible above: {a}")?;
                }
                Ok(())
            }
            Error::MarkerCount { expected, found } => {
                write!(f, "expected {expected} end-of-block markers, found {found}")
            }
            Error::IdOutOfVocab { id, limit } => {
                write!(f, "token id {id} outside vocabulary (limit {limit})")
            }
            Error::LengthOverflow { block, length, max } => {
                write!(f, "block {block} holds {length} ids, capacity is {max}")
            }
            Error::InvalidDistribution(msg) => write!(f, "invalid distribution: {msg}"),
            Error::InvalidParam(msg) => write!(f, "invalid parameter: {msg}"),
            Error::ExhaustiveLimit { batch, limit } => {
                write!(f, "batch size {batch} exceeds exhaustive verification limit {limit}")
            }
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code convention: 2 for validation errors, 3 for
    /// infeasible budgets.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InfeasibleBudget { .. } => 3,
            _ => 2,
        }
    }
}
