//! STL-10 binary-format loader.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::image_ops::Image;

use super::{DatasetHandle, ImageRecord, Split};

const SIDE: usize = 96;
const IMAGE_BYTES: usize = SIDE * SIDE * 3;

/// STL-10 images are stored per channel in column-major order.
pub(super) fn decode_image(bytes: &[u8]) -> Image {
    let mut img: Image = Array3::zeros((SIDE, SIDE, 3));
    for c in 0..3 {
        for col in 0..SIDE {
            for row in 0..SIDE {
                img[(row, col, c)] = bytes[c * SIDE * SIDE + col * SIDE + row] as f32 / 255.0;
            }
        }
    }
    img
}

fn locate(root: &Path, file: &str) -> Option<PathBuf> {
    let direct = root.join(file);
    if direct.exists() {
        return Some(direct);
    }
    let nested = root.join("stl10_binary").join(file);
    nested.exists().then_some(nested)
}

fn read_images(root: &Path, file: &str, split: Split, expected: usize) -> Result<Vec<Image>> {
    let path = locate(root, file).ok_or_else(|| Error::MissingSplit {
        name: "stl10".into(),
        split: split.to_string(),
        detail: format!("{file} not found under {}", root.display()),
    })?;
    let bytes = fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() % IMAGE_BYTES != 0 {
        return Err(Error::CorruptData {
            path: path.display().to_string(),
            detail: format!(
                "file length {} is not a multiple of the image size {IMAGE_BYTES}",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / IMAGE_BYTES;
    if n != expected {
        return Err(Error::SplitCountMismatch {
            name: "stl10".into(),
            split: split.to_string(),
            expected,
            actual: n,
        });
    }
    Ok(bytes.chunks_exact(IMAGE_BYTES).map(decode_image).collect())
}

fn read_labels(root: &Path, file: &str, split: Split, expected: usize) -> Result<Vec<usize>> {
    let path = locate(root, file).ok_or_else(|| Error::MissingSplit {
        name: "stl10".into(),
        split: split.to_string(),
        detail: format!("{file} not found under {}", root.display()),
    })?;
    let bytes = fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() != expected {
        return Err(Error::CorruptData {
            path: path.display().to_string(),
            detail: format!("expected {expected} label bytes, found {}", bytes.len()),
        });
    }
    // labels are 1-based on disk
    Ok(bytes.iter().map(|&b| (b as usize).saturating_sub(1)).collect())
}

/// STL-10: 5,000 labeled train + 100,000 unlabeled + 8,000 test at 96x96.
pub fn load_stl10(root: &Path) -> Result<DatasetHandle> {
    let train_images = read_images(root, "train_X.bin", Split::Train, 5_000)?;
    let train_labels = read_labels(root, "train_y.bin", Split::Train, 5_000)?;
    let test_images = read_images(root, "test_X.bin", Split::Test, 8_000)?;
    let test_labels = read_labels(root, "test_y.bin", Split::Test, 8_000)?;
    let unlabeled = read_images(root, "unlabeled_X.bin", Split::Unlabeled, 100_000)?;

    let mut records = Vec::with_capacity(113_000);
    for (img, label) in train_images.into_iter().zip(train_labels) {
        let mut rec = ImageRecord::new(records.len(), img, Split::Train);
        rec.label = Some(label);
        records.push(rec);
    }
    for img in unlabeled {
        records.push(ImageRecord::new(records.len(), img, Split::Unlabeled));
    }
    for (img, label) in test_images.into_iter().zip(test_labels) {
        let mut rec = ImageRecord::new(records.len(), img, Split::Test);
        rec.label = Some(label);
        records.push(rec);
    }
    DatasetHandle::from_records("stl10", SIDE, 10, records)
}
