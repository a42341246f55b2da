use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid model, graph or layer configuration (including dimension mismatches).
    #[error("configuration error: {0}")]
    Config(String),
    /// Sample features do not conform to the schema.
    #[error("schema error: {0}")]
    Schema(String),
    /// Missing or malformed data (labels, timestamps, empty splits).
    #[error("data error: {0}")]
    Data(String),
    /// API misuse, e.g. calling backward on a non-scalar node.
    #[error("usage error: {0}")]
    Usage(String),
    /// The metric is not defined for the given input (single class, zero mass, ...).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at batch {batch} (task `{task}`)")]
    NonFiniteLoss { batch: usize, task: String },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::Error::Data(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use data_err;
