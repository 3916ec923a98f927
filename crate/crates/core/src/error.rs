use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("channel {channel} out of range (signal has {channels} channels)")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("problem is infeasible (residual margin {margin:.3e})")]
    Infeasible { margin: f64 },
    #[error("state is not steerable to the target within T_max = {t_max}")]
    Unreachable { t_max: f64 },
    #[error("horizon {horizon} is shorter than the minimum time {min_time}")]
    HorizonTooShort { horizon: f64, min_time: f64 },
    #[error("support enumeration exceeded its budget of {budget} feasibility solves")]
    BudgetExceeded { budget: usize },
    #[error("normality could not be established for this plant")]
    NormalityUnknown,
    #[error("solver hit the iteration limit ({0} iterations)")]
    MaxIter(usize),
    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
