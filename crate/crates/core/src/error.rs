use std::io;

use thiserror::Error;

pub type Result<T, E = FedPaeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FedPaeError {
    /// A configuration value violates its documented range.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    /// Input data is malformed or inconsistent with the requested operation.
    #[error("invalid input: {0}")]
    Input(String),

    /// Stored data disagrees with what it claims to describe.
    #[error("integrity error for model {model_id}: {reason}")]
    Integrity { model_id: String, reason: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("frame corrupted: checksum {expected:#010x} != computed {actual:#010x}")]
    Corruption { expected: u32, actual: u32 },

    /// Not an error condition on a stream: wait for `needed` more bytes.
    #[error("incomplete frame: need at least {needed} more bytes")]
    IncompleteFrame { needed: usize },

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("relative change undefined for a zero baseline")]
    UndefinedBase,

    #[error("refusing exhaustive search over {subsets} subsets (limit {limit})")]
    SearchTooLarge { subsets: u128, limit: u128 },

    #[error("objective evaluation returned NaN for mask {mask}")]
    NanObjective { mask: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<FedPaeError>,
    },
}

impl FedPaeError {
    pub fn config(field: &'static str, reason: impl Into<String>) -> Self {
        FedPaeError::Config {
            field,
            reason: reason.into(),
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        FedPaeError::Input(msg.into())
    }

    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        FedPaeError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a description of the stage that produced it.
    pub fn context(self, context: impl Into<String>) -> Self {
        FedPaeError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with all context layers stripped.
    pub fn root(&self) -> &FedPaeError {
        match self {
            FedPaeError::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for the CLI: 2 configuration, 3 input/data, 4 invariant.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            FedPaeError::Config { .. } => 2,
            FedPaeError::Invariant(_) | FedPaeError::NanObjective { .. } => 4,
            _ => 3,
        }
    }
}
