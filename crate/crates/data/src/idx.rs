//! IDX containers as used by MNIST and Fashion-MNIST.
//!
//! Header: big-endian magic `0x0000_08DD` where `08` is the unsigned-byte
//! element type and `DD` the number of dimensions, followed by one
//! big-endian u32 per dimension, then the payload.

use std::fs;
use std::path::Path;

use crate::error::{DataError, Result};
use crate::set::{LabeledImageSet, Split};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| DataError::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Checks the magic and returns the dimensions and the payload.
fn parse<'a>(path: &Path, bytes: &'a [u8], magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    let truncated = |needed| DataError::Truncated {
        path: path.to_owned(),
        needed,
        actual: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DataError::BadMagic {
            path: path.to_owned(),
            found,
            expected: magic,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = (0..ndim).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    let needed = header + dims.iter().product::<usize>();
    if bytes.len() < needed {
        return Err(truncated(needed));
    }
    Ok((dims, &bytes[header..needed]))
}

/// Reads an image file and a label file into a set with `num_classes`
/// classes named by their index. Bytes are scaled by 1/255.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    num_classes: usize,
    split: Split,
) -> Result<LabeledImageSet> {
    let names = (0..num_classes).map(|k| k.to_string()).collect();
    load_idx_named(images_path, labels_path, names, split)
}

pub fn load_idx_named(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    class_names: Vec<String>,
    split: Split,
) -> Result<LabeledImageSet> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read(ip)?;
    let label_bytes = read(lp)?;
    let (idims, payload) = parse(ip, &image_bytes, IMAGES_MAGIC)?;
    let (ldims, labels) = parse(lp, &label_bytes, LABELS_MAGIC)?;
    if idims[0] != ldims[0] {
        return Err(DataError::CountMismatch {
            images: idims[0],
            labels: ldims[0],
        });
    }
    let k = class_names.len();
    let labels: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(DataError::LabelOutOfRange { index, label, num_classes: k });
    }
    let pixels = payload.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(LabeledImageSet {
        height: idims[1],
        width: idims[2],
        pixels,
        labels,
        class_names,
        split,
        warnings: Vec::new(),
    })
}

/// Writes `set` as an image file and a label file. Intensities are rounded
/// to the nearest byte, so sets loaded with [`load_idx`] round-trip exactly.
pub fn write_idx(set: &LabeledImageSet, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    if set.num_classes() > 256 {
        return Err(DataError::contract("write_idx", "labels must fit in one byte"));
    }
    let n = set.len() as u32;
    let mut images = Vec::with_capacity(16 + set.pixels.len());
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [n, set.height as u32, set.width as u32] {
        images.extend_from_slice(&d.to_be_bytes());
    }
    images.extend(set.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));

    let mut labels = Vec::with_capacity(8 + set.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    labels.extend(set.labels.iter().map(|&l| l as u8));

    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, images).map_err(|e| DataError::io(ip, e))?;
    fs::write(lp, labels).map_err(|e| DataError::io(lp, e))
}

/// Standard file names of a dataset directory.
pub fn standard_paths(dir: impl AsRef<Path>, split: Split) -> (std::path::PathBuf, std::path::PathBuf) {
    let prefix = match split {
        Split::Test => "t10k",
        _ => "train",
    };
    let dir = dir.as_ref();
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}
