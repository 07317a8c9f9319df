use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let b = bytes.get(at..at + 4).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        needed: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn body<'a>(bytes: &'a [u8], header: usize, count: usize, path: &Path) -> Result<&'a [u8]> {
    let needed = header + count;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    Ok(&bytes[header..needed])
}

/// Parses a 3-D unsigned-byte IDX image file into `[N, H, W]` with pixels
/// scaled to `[0, 1]`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    check_magic(&bytes, IMAGES_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let h = be_u32(&bytes, 8, path)? as usize;
    let w = be_u32(&bytes, 12, path)? as usize;
    let pixels = body(&bytes, 16, n * h * w, path)?;
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Tensor::new(vec![n, h, w], data)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    check_magic(&bytes, LABELS_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    Ok(body(&bytes, 8, n, path)?.iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label IDX pair as a dataset of `[N, H, W]` images.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, classes: usize) -> Result<Dataset> {
    let features = read_idx_images(&images)?;
    let labels = read_idx_labels(labels)?;
    if features.shape()[0] != labels.len() {
        return Err(Error::CountMismatch {
            images: features.shape()[0],
            labels: labels.len(),
        });
    }
    let name = images
        .as_ref()
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, features, labels, classes)
}

/// Writes `[N, H, W]` pixels in `[0, 1]` as an unsigned-byte IDX file.
pub fn write_idx_images(path: impl AsRef<Path>, images: &Tensor) -> Result<()> {
    let s = images.shape();
    if s.len() != 3 {
        return Err(Error::Layout(format!("expected [N, H, W], got {s:?}")));
    }
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for &d in s {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(std::fs::write(path, out)?)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    Ok(std::fs::write(path, out)?)
}
