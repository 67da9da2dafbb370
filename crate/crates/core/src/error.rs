use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("rank deficient: need rank {needed}, smallest kept singular value {sigma:e} (largest {sigma_max:e})")]
    RankDeficient {
        needed: usize,
        sigma: f64,
        sigma_max: f64,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidInput(alloc::format!($($arg)*))
    };
}

macro_rules! mismatch {
    ($($arg:tt)*) => {
        $crate::Error::DimensionMismatch(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use mismatch;
