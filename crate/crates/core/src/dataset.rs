//! Reader for the IDX image/label files used by handwritten-digit datasets.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("images are {rows}x{cols}; the network expects {inputs} inputs")]
    ShapeMismatch { rows: usize, cols: usize, inputs: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<u8>>,
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn read(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

fn format(path: &Path, reason: impl Into<String>) -> DatasetError {
    DatasetError::Format { path: path.to_path_buf(), reason: reason.into() }
}

pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<IdxImages, DatasetError> {
    if bytes.len() < 16 || be_u32(bytes, 0) != IMAGE_MAGIC {
        return Err(format(path, "not an IDX image file"));
    }
    let (n, rows, cols) = (be_u32(bytes, 4) as usize, be_u32(bytes, 8) as usize, be_u32(bytes, 12) as usize);
    let size = rows * cols;
    if bytes.len() != 16 + n * size {
        return Err(format(path, format!("expected {} bytes for {n} images of {rows}x{cols}", 16 + n * size)));
    }
    Ok(IdxImages { rows, cols, pixels: bytes[16..].chunks(size.max(1)).map(<[u8]>::to_vec).collect() })
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>, DatasetError> {
    if bytes.len() < 8 || be_u32(bytes, 0) != LABEL_MAGIC {
        return Err(format(path, "not an IDX label file"));
    }
    let n = be_u32(bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(format(path, format!("expected {} bytes for {n} labels", 8 + n)));
    }
    Ok(bytes[8..].to_vec())
}

/// 2x2 average pooling of a row-major image.
pub fn avg_pool2(pixels: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let (r2, c2) = (rows / 2, cols / 2);
    let mut out = Vec::with_capacity(r2 * c2);
    for r in 0..r2 {
        for c in 0..c2 {
            let at = |dr: usize, dc: usize| pixels[(2 * r + dr) * cols + 2 * c + dc];
            out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
        }
    }
    out
}

/// Normalized samples ready for rate coding.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    /// Scales pixels to [0, 1]. When `inputs` is a quarter of the image size
    /// the images are average-pooled 2x2 (28x28 becomes 14x14).
    pub fn from_idx(images: &IdxImages, labels: Vec<u8>, inputs: usize) -> Result<Self, DatasetError> {
        if images.pixels.len() != labels.len() {
            return Err(DatasetError::CountMismatch { images: images.pixels.len(), labels: labels.len() });
        }
        let (rows, cols) = (images.rows, images.cols);
        let pool = if inputs == rows * cols {
            false
        } else if inputs == (rows / 2) * (cols / 2) {
            true
        } else {
            return Err(DatasetError::ShapeMismatch { rows, cols, inputs });
        };
        let samples = images
            .pixels
            .iter()
            .map(|px| {
                let norm: Vec<f64> = px.iter().map(|&p| p as f64 / 255.0).collect();
                if pool {
                    avg_pool2(&norm, rows, cols)
                } else {
                    norm
                }
            })
            .collect();
        Ok(Dataset { samples, labels })
    }

    pub fn load(images: &Path, labels: &Path, inputs: usize) -> Result<Self, DatasetError> {
        let img = parse_images(images, &read(images)?)?;
        let lab = parse_labels(labels, &read(labels)?)?;
        Self::from_idx(&img, lab, inputs)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn truncate(&mut self, n: usize) {
        self.samples.truncate(n);
        self.labels.truncate(n);
    }
}
