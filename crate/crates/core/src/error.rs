use std::path::PathBuf;

use thiserror::Error;

use crate::raster::Dims;

/// Failures of the pixel-level observation math.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObsError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: Dims, right: Dims },
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("mask union needs at least one mask")]
    EmptyMaskList,
    #[error("normalized depth {value} at pixel {index} is outside [0, 1]")]
    DepthOutOfRange { index: usize, value: f64 },
    #[error("variant {0} requires a depth map but none was provided")]
    MissingDepth(crate::obs::Variant),
    #[error("invalid palette: {0}")]
    InvalidPalette(String),
    #[error("invalid task spec: {0}")]
    InvalidTaskSpec(String),
}

/// Failures while encoding or decoding raster files.
#[derive(Debug, Error)]
pub enum CodecError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("io error: {0}")]
    Stream(#[from] std::io::Error),
    #[error("corrupt {format} data: {reason}")]
    Corrupt { format: &'static str, reason: String },
    #[error(transparent)]
    Raster(#[from] ObsError),
}

impl CodecError {
    pub(crate) fn corrupt(format: &'static str, reason: impl Into<String>) -> Self {
        CodecError::Corrupt { format, reason: reason.into() }
    }
}
