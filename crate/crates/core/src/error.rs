use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the numeric core, the quantizer, the loss functions and
/// the regularizer state machine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target {value} out of range at row {row} ({classes} classes)")]
    TargetIndex {
        row: usize,
        value: usize,
        classes: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("quantizer state: {0}")]
    QuantState(String),

    #[error("regularizer state corrupted: {0}")]
    StateCorruption(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Checkpoint load failures. Each corruption mode gets its own variant so
/// callers can tell a stale file from a damaged one.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic header")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("checksum mismatch")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("label {label} out of range for {classes} classes (sample {index})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
