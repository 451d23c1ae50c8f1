use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid dimension {0}; must be at least 1")]
    InvalidDimension(usize),

    #[error("empty box: lo {lo:?} exceeds hi {hi:?}")]
    EmptyBox { lo: Vec<i32>, hi: Vec<i32> },

    #[error("arithmetic overflow in {0}")]
    Overflow(&'static str),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("site {0:?} lies outside the box and the boundary condition is free")]
    FreeBoundaryRead(Vec<i32>),

    #[error("site {0:?} is not in the box")]
    SiteOutsideBox(Vec<i32>),

    #[error("boundary condition mismatch between configuration and parameters")]
    BoundaryMismatch,

    #[error("{what} of size {size} exceeds the cap of {cap}")]
    CapExceeded {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("cumulant order {order} is outside the supported range 1..={max}")]
    OrderOutOfRange { order: usize, max: usize },

    #[error("insufficient samples: need at least {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error("expectation of a sub-product vanishes; Q is undefined")]
    VanishingExpectation,

    #[error("missing cumulant table entry for {0}")]
    MissingEntry(String),

    #[error("fitted decay does not decay (rate {0}); parameters look out of regime")]
    NonDecaying(f64),

    #[error("degenerate variance for {0}")]
    DegenerateVariance(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
