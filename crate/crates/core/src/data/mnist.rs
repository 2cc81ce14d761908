//! IDX-format loader (MNIST and compatible digit sets).
//!
//! Integers are big-endian 32-bit; magic numbers are 0x00000803 for image
//! files and 0x00000801 for label files. Files ending in `.gz` are
//! decompressed transparently; byte offsets in errors then refer to the
//! decompressed stream.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    } else {
        let mut file = file;
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated while reading {what}"),
        ));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Load an IDX image/label file pair. Pixels are scaled to [0, 1]; images
/// come out as `[n, 1, rows, cols]`. K is the highest label plus one
/// (10 for the standard digit files).
pub fn load_mnist_idx(image_path: &Path, label_path: &Path, split: Split) -> Result<Dataset> {
    let img_bytes = read_all(image_path)?;
    let magic = read_u32_be(&img_bytes, 0, image_path, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            image_path,
            0,
            format!("bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"),
        ));
    }
    let n = read_u32_be(&img_bytes, 4, image_path, "image count")? as usize;
    let rows = read_u32_be(&img_bytes, 8, image_path, "row count")? as usize;
    let cols = read_u32_be(&img_bytes, 12, image_path, "column count")? as usize;
    let expected = 16 + n * rows * cols;
    if img_bytes.len() < expected {
        return Err(Error::format(
            image_path,
            img_bytes.len() as u64,
            format!("truncated image data: expected {expected} bytes"),
        ));
    }
    let pixels: Vec<f64> = img_bytes[16..expected]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();

    let lbl_bytes = read_all(label_path)?;
    let magic = read_u32_be(&lbl_bytes, 0, label_path, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            label_path,
            0,
            format!("bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"),
        ));
    }
    let n_labels = read_u32_be(&lbl_bytes, 4, label_path, "label count")? as usize;
    if n_labels != n {
        return Err(Error::format(
            label_path,
            4,
            format!("label count {n_labels} does not match image count {n}"),
        ));
    }
    if lbl_bytes.len() < 8 + n {
        return Err(Error::format(
            label_path,
            lbl_bytes.len() as u64,
            format!("truncated label data: expected {} bytes", 8 + n),
        ));
    }
    let labels: Vec<usize> = lbl_bytes[8..8 + n].iter().map(|&b| b as usize).collect();
    let k = labels.iter().max().map_or(0, |m| m + 1).max(2);

    Dataset::new(Tensor::new(vec![n, 1, rows, cols], pixels)?, labels, k, split)
}
