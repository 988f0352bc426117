use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("denominator vanishes at omega = {omega} (|D(jw)| = {magnitude:e})")]
    DenominatorZero { omega: f64, magnitude: f64 },

    #[error("degenerate motor model: B*R + K^2 = {0:e} is too small to normalize")]
    DegenerateModel(f64),

    #[error(
        "lambda = {0} makes sin(lambda*pi/2) vanish; the boundary equations degenerate (lambda must lie in (0, 2))"
    )]
    DegenerateLambda(f64),

    #[error("singular boundary system at omega = {omega} (|det| = {det:e})")]
    SingularSystem { omega: f64, det: f64 },

    #[error("boundary point at omega = {omega} fails back-substitution (relative residual {residual:e})")]
    ResidualCheck { omega: f64, residual: f64 },

    #[error("every node of the frequency grid was singular")]
    EmptyCurve,

    #[error("no common commensurate order with denominator <= {max_denominator} for exponent {exponent}")]
    CommensurateApproximation { exponent: f64, max_denominator: u32 },

    #[error("root finder did not converge (relative residual {0:e})")]
    ConvergenceFailure(f64),

    #[error(
        "plant has non-integer exponent {0}; time simulation supports integer-order plants only"
    )]
    NonIntegerPlant(f64),

    #[error("evaluation window [{start}, {end}] lies outside the trace span [0, {span}]")]
    WindowOutOfRange { start: f64, end: f64, span: f64 },

    #[error("no sustained limit cycle: {0}")]
    NoLimitCycle(String),

    #[error("horizon {horizon} s too short: observed {switches} relay switchings, need {needed}")]
    HorizonTooShort {
        horizon: f64,
        switches: usize,
        needed: usize,
    },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub(crate) fn finite(value: f64, what: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what))
    }
}
