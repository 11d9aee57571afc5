//! Feedforward network compiler: quantization, placement and fabric image emission.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::fixed::QuantizeError;

mod image;
mod network;
mod placement;

pub use image::{emit_image, BaselineImage, FabricImage, ImageManifest, IMAGE_SCHEMA};
pub use network::{NetworkDescription, QuantizedNetwork};
pub use placement::{place, Placement, PHYSICAL_ID_LIMIT, VIRTUAL_ID_BASE};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("network description: {0}")]
    Schema(String),
    #[error("capacity exceeded: {0}")]
    CapacityExceeded(String),
    #[error("cannot quantize {what}: {source}")]
    Quantize { what: String, source: QuantizeError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
}

impl CompileError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CompileError::Io { path: path.into(), source }
    }
}
