use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed container: {0}")]
    Container(String),

    #[error("tensor `{name}` contains a non-finite value at element {index}")]
    NonFinite { name: String, index: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("block length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("message of {required} bits exceeds capacity of {capacity} bits")]
    CapacityExceeded { required: u64, capacity: u64 },

    #[error("coefficient overflow: {value:e} scaled by 10^{exponent} does not fit exactly in an integer")]
    Overflow { value: f64, exponent: i32 },

    #[error("block exponent did not stabilize after {iterations} iterations (last d = {last})")]
    NonConvergent { iterations: usize, last: i32 },

    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),
}
