//! File formats, manifest-driven orchestration, reports, and timing for
//! the lnseg toolkit. The algorithms live in `lnseg-core`; this crate
//! reads and writes volumes (a strict NIfTI-1 subset), JSON sidecars,
//! and report files, and exposes everything as the `lnseg` binary.

use std::path::{Path, PathBuf};

pub mod bench;
pub mod cli;
pub mod manifest;
pub mod nifti;
pub mod report;
pub mod sidecar;

/// Version tags of the on-disk formats this build reads and writes.
pub const FORMAT_VERSIONS: &str =
    "nifti-subset v1, stations-sidecar v1, geometry-record v1, slab-meta v1, manifest v1, report v1";

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error(transparent)]
    Core(#[from] lnseg_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: unsupported: {msg}")]
    Unsupported { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("manifest: patient {patient} is missing {role}")]
    Manifest { patient: String, role: String },
    #[error("{0}")]
    Invalid(String),
}

impl ToolError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        ToolError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        ToolError::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub fn unsupported(path: &Path, msg: impl Into<String>) -> Self {
        ToolError::Unsupported {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 1 for validation problems, 2 for I/O and file
    /// format problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            ToolError::Io { .. }
            | ToolError::Format { .. }
            | ToolError::Unsupported { .. }
            | ToolError::Json { .. } => 2,
            ToolError::Core(_) | ToolError::Manifest { .. } | ToolError::Invalid(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, ToolError>;
