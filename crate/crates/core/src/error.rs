use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report. Each variant maps to a stable wire
/// code (see [`Error::code`]).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidValue { field: &'static str, reason: String },

    #[error("`{field}` out of range: {reason}")]
    OutOfRange { field: String, reason: String },

    #[error("unknown configuration key: {0}")]
    UnknownKey(String),

    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("sample {0} is already registered")]
    DuplicateId(u64),

    #[error("sample {0} is not registered")]
    UnknownId(u64),

    #[error("decision {0} is not the most recent decision")]
    UnknownDecision(u64),

    #[error("sample {0} was not part of the last replay decision")]
    NotInDecision(u64),

    #[error("step went backwards: {previous} -> {requested}")]
    StepRegression { previous: u64, requested: u64 },

    #[error("operation requires scheduler mode `{expected}`")]
    WrongMode { expected: &'static str },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("snapshot format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("unknown operation `{0}`")]
    UnknownOp(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidValue { field, reason: reason.into() }
    }

    pub(crate) fn range(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::OutOfRange { field: field.into(), reason: reason.into() }
    }

    /// Stable machine-readable code used in protocol error responses.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidValue { .. } => "invalid_value",
            Error::OutOfRange { .. } => "out_of_range",
            Error::UnknownKey(_) => "unknown_key",
            Error::Malformed(_) => "malformed",
            Error::DuplicateId(_) => "duplicate_id",
            Error::UnknownId(_) => "unknown_id",
            Error::UnknownDecision(_) => "unknown_decision",
            Error::NotInDecision(_) => "not_in_decision",
            Error::StepRegression { .. } => "step_regression",
            Error::WrongMode { .. } => "wrong_mode",
            Error::Empty(_) => "empty",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::CorruptSnapshot(_) => "corrupt_snapshot",
            Error::UnknownOp(_) => "unknown_op",
            Error::BadRequest(_) => "bad_request",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
