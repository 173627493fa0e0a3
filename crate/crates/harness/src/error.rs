use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const IO: i32 = 4;
    pub const CHECKPOINT_VERSION: i32 = 5;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged in cell {cell} at step {step}: {source}")]
    Diverged {
        cell: String,
        step: usize,
        #[source]
        source: vgf::Error,
    },

    #[error(transparent)]
    Core(#[from] vgf::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        HarnessError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => exit::CONFIG,
            HarnessError::Io { .. } | HarnessError::Json(_) => exit::IO,
            HarnessError::Diverged { .. } => exit::NUMERIC,
            HarnessError::Core(e) => match e {
                vgf::Error::Config { .. } | vgf::Error::Usage(_) => exit::CONFIG,
                vgf::Error::NonFinite { .. } => exit::NUMERIC,
                vgf::Error::CheckpointVersion { .. } => exit::CHECKPOINT_VERSION,
                vgf::Error::Io(_) | vgf::Error::Json(_) | vgf::Error::Format { .. } => exit::IO,
                vgf::Error::Shape { .. } | vgf::Error::Env { .. } => exit::INTERNAL,
            },
        }
    }
}
