//! IDX files: a 4-byte big-endian magic, one 4-byte big-endian extent per
//! dimension, then raw unsigned bytes. Images use magic `0x00000803`
//! (count x rows x cols), labels `0x00000801` (count).

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Parsed IDX payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: bytes.len() as u64,
            detail: format!("header truncated while reading 4 bytes at offset {offset}"),
        })
}

/// Parses an in-memory IDX file with the expected magic number.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<IdxArray> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected_magic {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"),
        });
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        dims.push(be_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndim;
    let n: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < n {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: format!("payload truncated: header declares {n} bytes starting at offset {header}"),
        });
    }
    if payload.len() > n {
        return Err(Error::Format {
            offset: (header + n) as u64,
            detail: format!("{} trailing bytes after payload", payload.len() - n),
        });
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

pub fn encode_idx(magic: u32, dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label file pair. Images are flattened to `rows * cols`
/// features scaled by 1/255; the class count is one past the largest label
/// (at least 2).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let images = parse_idx(&read(images_path)?, IMAGES_MAGIC)?;
    let labels = parse_idx(&read(labels_path.as_ref())?, LABELS_MAGIC)?;
    let (n, rows, cols) = (images.dims[0], images.dims[1], images.dims[2]);
    if n != labels.dims[0] {
        return Err(Error::Input(format!("{n} images but {} labels", labels.dims[0])));
    }
    if n == 0 || rows * cols == 0 {
        return Err(Error::Input("empty IDX dataset".into()));
    }
    let features = Tensor::new(vec![n, rows * cols], images.data.iter().map(|&b| f64::from(b) / 255.0).collect())?;
    let labels: Vec<usize> = labels.data.iter().map(|&b| usize::from(b)).collect();
    let k = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let tag = images_path.file_stem().and_then(|s| s.to_str()).unwrap_or("idx").to_string();
    Dataset::new(features, Some(labels), tag, k)
}

/// Writes features (quantized as `round(255 v)`, clamped to [0,1]) as an
/// `N x 1 x d` image file and labels as a label file.
pub fn write_idx(ds: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let labels = ds.labels().ok_or_else(|| Error::Input("IDX export needs labels".into()))?;
    if ds.num_classes() > 256 {
        return Err(Error::Input("IDX labels are single bytes".into()));
    }
    let pixels: Vec<u8> = ds
        .features()
        .values()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = encode_idx(IMAGES_MAGIC, &[ds.len(), 1, ds.dim()], &pixels);
    let lab = encode_idx(LABELS_MAGIC, &[ds.len()], &labels.iter().map(|&y| y as u8).collect::<Vec<_>>());
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    std::fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    std::fs::write(lp, lab).map_err(|e| Error::io(lp, e))
}
