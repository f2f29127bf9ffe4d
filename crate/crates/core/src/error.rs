//! Error types shared across the simulator and inference stack.

use thiserror::Error;

/// Top-level error for all library operations.
///
/// The variants map onto the CLI exit-code contract: configuration problems
/// exit with 2, insufficient-data conditions with 3, defense refusals with 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; always names the offending field.
    #[error("config error: field `{field}`: {message}")]
    Config { field: String, message: String },

    /// A value fell outside the simulator's declared validity range.
    #[error("range error: {0}")]
    Range(String),

    /// Malformed argument combination (mismatched regions, non-monotone
    /// temperature lists, empty traces, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// Not enough data points to carry out a fit or estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A temperature step had fewer candidate indicator cells than `l`.
    #[error(
        "insufficient candidate indicator cells at step {step_temp_c} °C: found {found}, need {needed}; \
         a larger DRAM region or a longer decay time t should be used"
    )]
    InsufficientCandidates {
        step_temp_c: f64,
        found: usize,
        needed: usize,
    },

    /// BER is undefined because there were zero candidate cells.
    #[error("undefined BER: zero candidate indicator cells; enlarge the DRAM region")]
    UndefinedBer,

    /// Cross-device calibration could not be established (no flips observed
    /// at the known temperature).
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    /// Wire-protocol decode failure, with the byte offset of the bad field.
    #[error("protocol parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Wire-protocol version mismatch.
    #[error("unknown protocol version token `{0}`")]
    Version(String),

    /// The defense policy refused the operation (attack blocked).
    #[error("defense refusal: {0}")]
    Refused(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// Exit code for the CLI contract: 0 success, 2 config, 3 insufficient
    /// data, 4 defense refusal. Everything else maps to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::InsufficientData(_)
            | Error::InsufficientCandidates { .. }
            | Error::UndefinedBer
            | Error::DegenerateCalibration(_) => 3,
            Error::Refused(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
