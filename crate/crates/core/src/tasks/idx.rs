//! The IDX container used by MNIST-style image sets: a big-endian magic
//! (`0x00000803` for u8 image stacks, `0x00000801` for u8 label vectors),
//! big-endian dimensions, then raw bytes.

use std::path::Path;

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{LsboError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, detail: impl Into<String>) -> LsboError {
    LsboError::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn header(bytes: &[u8], magic: u32, path: &Path) -> Result<(Vec<usize>, usize)> {
    if bytes.len() < 4 {
        return Err(format_err(path, "file shorter than the magic number"));
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if found != magic {
        return Err(format_err(path, format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    let ndim = (magic & 0xff) as usize;
    let end = 4 + 4 * ndim;
    if bytes.len() < end {
        return Err(format_err(path, "truncated dimension header"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    match expected {
        Some(n) if bytes.len() - end == n => Ok((dims, end)),
        Some(n) => Err(format_err(
            path,
            format!("payload has {} bytes, header promises {n}", bytes.len() - end),
        )),
        None => Err(format_err(path, "dimension product overflows")),
    }
}

/// `(count, rows, cols, pixels)` of an image file held in memory.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let (dims, start) = header(bytes, IMAGE_MAGIC, path)?;
    Ok((dims[0], dims[1], dims[2], bytes[start..].to_vec()))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let (_, start) = header(bytes, LABEL_MAGIC, path)?;
    Ok(bytes[start..].to_vec())
}

pub fn encode_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != count * rows * cols {
        return Err(LsboError::invalid("pixel buffer does not match dimensions"));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [count, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Load an image/label pair, scaling bytes to `[0, 1]` and dropping every
/// row of `exclude` when given.
pub fn load_idx(images: &Path, labels: &Path, exclude: Option<u8>) -> Result<Dataset> {
    let ib = std::fs::read(images).map_err(|e| LsboError::io(images, e))?;
    let lb = std::fs::read(labels).map_err(|e| LsboError::io(labels, e))?;
    let (count, rows, cols, pixels) = parse_images(&ib, images)?;
    let labs = parse_labels(&lb, labels)?;
    if labs.len() != count {
        return Err(format_err(
            labels,
            format!("{} labels for {count} images", labs.len()),
        ));
    }
    let dim = rows * cols;
    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let name = images
        .file_name()
        .map_or_else(|| "idx".to_string(), |n| n.to_string_lossy().into_owned());
    let full = Dataset::new(name, Tensor::matrix(count, dim, data), Some(labs))?;
    match exclude {
        Some(c) => full.without_class(c),
        None => Ok(full),
    }
}

pub fn write_idx(images: &Path, labels: &Path, data: &[u8], count: usize, rows: usize, cols: usize, labs: &[u8]) -> Result<()> {
    if labs.len() != count {
        return Err(LsboError::invalid("label count differs from image count"));
    }
    std::fs::write(images, encode_images(count, rows, cols, data)?).map_err(|e| LsboError::io(images, e))?;
    std::fs::write(labels, encode_labels(labs)).map_err(|e| LsboError::io(labels, e))
}
