use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nnkernel::Matrix;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn data_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Data {
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| data_err(bytes.len(), "truncated header"))
}

/// Read an IDX image file and its label file.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Parse in-memory IDX files. Each image is flattened row-major and pixel `p`
/// maps to `p / 127.5 - 1`. The class count is `max(label) + 1`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    if be_u32(images, 0)? != IMAGE_MAGIC {
        return Err(data_err(0, "bad image magic"));
    }
    let n = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let dim = rows * cols;
    let body = &images[16..];
    if body.len() < n * dim {
        return Err(data_err(images.len(), format!("expected {} pixel bytes", n * dim)));
    }

    if be_u32(labels, 0)? != LABEL_MAGIC {
        return Err(data_err(0, "bad label magic"));
    }
    let ln = be_u32(labels, 4)? as usize;
    if ln != n {
        return Err(data_err(4, format!("{ln} labels for {n} images")));
    }
    let lbody = &labels[8..];
    if lbody.len() < n {
        return Err(data_err(labels.len(), format!("expected {n} label bytes")));
    }

    let pixels = body[..n * dim]
        .iter()
        .map(|&p| p as f32 / 127.5 - 1.0)
        .collect();
    let label_vec: Vec<usize> = lbody[..n].iter().map(|&l| l as usize).collect();
    let classes = label_vec.iter().copied().max().map_or(1, |m| m + 1);
    LabeledDataset::new(Matrix::from_vec(n, dim, pixels)?, label_vec, classes)
}
