use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("not enough history: need {needed} samples, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("integration blew up at t={t}")]
    BlowUp { t: f64 },
    #[error("missing quantile level {0}")]
    MissingQuantile(f64),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss={loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    /// A bad input record; `index` counts from 0 within its kind.
    #[error("{kind} record {index}: {message}")]
    Record {
        kind: RecordKind,
        index: usize,
        message: String,
    },
    #[error("leakage: training sample targets week {week} inside the held-out period")]
    Leakage { week: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Forecast,
    Truth,
}

impl core::fmt::Display for RecordKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            RecordKind::Forecast => "forecast",
            RecordKind::Truth => "truth",
        })
    }
}

pub type Result<T> = core::result::Result<T, Error>;
