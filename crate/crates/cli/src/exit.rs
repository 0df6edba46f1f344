use robust_trim::Error;

pub const OK: u8 = 0;
pub const VERIFICATION: u8 = 1;
pub const DATA: u8 = 2;
pub const SOLVER: u8 = 3;
pub const USAGE: u8 = 64;
pub const UNDEFINED_BOUND: u8 = 65;

/// A command failure with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(DATA, message)
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(USAGE, message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => USAGE,
            Error::DegenerateColumn(_) => DATA,
            Error::TooLarge { .. } | Error::NonConvergence { .. } | Error::RankDeficient { .. } => SOLVER,
            Error::UndefinedBound(_) => UNDEFINED_BOUND,
        };
        Self::new(code, e.to_string())
    }
}
