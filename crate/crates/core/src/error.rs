use std::path::PathBuf;

use thiserror::Error;

/// Failures while decoding the raw tensor container.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RawFormatError {
    #[error("bad magic bytes {0:?}, expected \"PANT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported raw format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("dimensions {channels}x{height}x{width} overflow the addressable size")]
    DimensionOverflow {
        channels: u32,
        height: u32,
        width: u32,
    },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    /// Every violated rule, collected rather than stopping at the first one.
    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("invalid column range start={start} len={len} wrap={wrap} for width {width}")]
    InvalidRange {
        start: usize,
        len: usize,
        wrap: bool,
        width: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite tensor value at index {0}")]
    NonFinite(usize),

    #[error("noise schedule: {0}")]
    Schedule(String),

    #[error("raw tensor {path}: {source}")]
    RawFormat {
        path: PathBuf,
        #[source]
        source: RawFormatError,
    },

    #[error("payload site {site}: {reason}")]
    Payload { site: String, reason: String },

    #[error("weight field has zero coverage at column {column}")]
    Coverage { column: usize },

    #[error("denoiser {denoiser} failed at step {step}: {reason}")]
    Denoiser {
        denoiser: String,
        step: usize,
        reason: String,
    },

    #[error("window {window}: {source}")]
    Window {
        window: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(vec![msg.into()])
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the root cause is a configuration/validation problem
    /// rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Validation(_) | Error::InvalidRange { .. } => true,
            Error::Stage { source, .. } | Error::Window { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Collects validation messages and turns them into one error.
#[derive(Debug, Default)]
pub(crate) struct Violations(Vec<String>);

impl Violations {
    pub fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.0.push(msg());
        }
    }

    pub fn into_result(self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self.0))
        }
    }
}
