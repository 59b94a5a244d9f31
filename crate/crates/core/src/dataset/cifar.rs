//! CIFAR-10/100 binary-format loaders.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::image_ops::Image;

use super::{DatasetHandle, ImageRecord, Split};

const CIFAR_SIDE: usize = 32;
const PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;

/// One CIFAR record: `label_bytes` leading label bytes, then an RGB image as
/// three 1024-byte planes in row-major order.
fn decode_record(bytes: &[u8], label_bytes: usize) -> (Vec<u8>, Image) {
    let labels = bytes[..label_bytes].to_vec();
    let data = &bytes[label_bytes..];
    let mut img: Image = Array3::zeros((CIFAR_SIDE, CIFAR_SIDE, 3));
    for c in 0..3 {
        for y in 0..CIFAR_SIDE {
            for x in 0..CIFAR_SIDE {
                img[(y, x, c)] = data[c * PLANE + y * CIFAR_SIDE + x] as f32 / 255.0;
            }
        }
    }
    (labels, img)
}

/// Parse a CIFAR batch file into (labels, image) pairs.
pub(super) fn parse_batch(
    bytes: &[u8],
    label_bytes: usize,
    path: &Path,
) -> Result<Vec<(Vec<u8>, Image)>> {
    let record_len = label_bytes + 3 * PLANE;
    if bytes.is_empty() || bytes.len() % record_len != 0 {
        return Err(Error::CorruptData {
            path: path.display().to_string(),
            detail: format!(
                "file length {} is not a multiple of the record size {record_len}",
                bytes.len()
            ),
        });
    }
    Ok(bytes
        .chunks_exact(record_len)
        .map(|chunk| decode_record(chunk, label_bytes))
        .collect())
}

fn locate(root: &Path, subdir: &str, file: &str) -> Option<PathBuf> {
    let direct = root.join(file);
    if direct.exists() {
        return Some(direct);
    }
    let nested = root.join(subdir).join(file);
    nested.exists().then_some(nested)
}

fn read_batch(
    root: &Path,
    subdir: &str,
    file: &str,
    label_bytes: usize,
    name: &str,
    split: Split,
) -> Result<Vec<(Vec<u8>, Image)>> {
    let path = locate(root, subdir, file).ok_or_else(|| Error::MissingSplit {
        name: name.into(),
        split: split.to_string(),
        detail: format!("{file} not found under {}", root.display()),
    })?;
    let bytes = fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_batch(&bytes, label_bytes, &path)
}

fn check_count(name: &str, split: Split, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::SplitCountMismatch {
            name: name.into(),
            split: split.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// CIFAR-10: 50,000 train / 10,000 val records at 32x32, 10 classes.
pub fn load_cifar10(root: &Path) -> Result<DatasetHandle> {
    let name = "cifar10";
    let subdir = "cifar-10-batches-bin";
    let mut records = Vec::with_capacity(60_000);
    for i in 1..=5 {
        let batch = read_batch(
            root,
            subdir,
            &format!("data_batch_{i}.bin"),
            1,
            name,
            Split::Train,
        )?;
        for (labels, img) in batch {
            let mut rec = ImageRecord::new(records.len(), img, Split::Train);
            rec.label = Some(labels[0] as usize);
            records.push(rec);
        }
    }
    let train_count = records.len();
    check_count(name, Split::Train, 50_000, train_count)?;
    let test = read_batch(root, subdir, "test_batch.bin", 1, name, Split::Val)?;
    check_count(name, Split::Val, 10_000, test.len())?;
    for (labels, img) in test {
        let mut rec = ImageRecord::new(records.len(), img, Split::Val);
        rec.label = Some(labels[0] as usize);
        records.push(rec);
    }
    DatasetHandle::from_records(name, CIFAR_SIDE, 10, records)
}

/// CIFAR-100 (fine labels): 50,000 train / 10,000 val at 32x32, 100 classes.
pub fn load_cifar100(root: &Path) -> Result<DatasetHandle> {
    let name = "cifar100";
    let subdir = "cifar-100-binary";
    let mut records = Vec::with_capacity(60_000);
    let train = read_batch(root, subdir, "train.bin", 2, name, Split::Train)?;
    check_count(name, Split::Train, 50_000, train.len())?;
    for (labels, img) in train {
        let mut rec = ImageRecord::new(records.len(), img, Split::Train);
        rec.label = Some(labels[1] as usize); // [coarse, fine]
        records.push(rec);
    }
    let test = read_batch(root, subdir, "test.bin", 2, name, Split::Val)?;
    check_count(name, Split::Val, 10_000, test.len())?;
    for (labels, img) in test {
        let mut rec = ImageRecord::new(records.len(), img, Split::Val);
        rec.label = Some(labels[1] as usize);
        records.push(rec);
    }
    DatasetHandle::from_records(name, CIFAR_SIDE, 100, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_record(label: u8, fill: u8) -> Vec<u8> {
        let mut rec = vec![label];
        rec.extend(std::iter::repeat_n(fill, 3 * PLANE));
        rec
    }

    #[test]
    fn parse_batch_decodes_labels_and_pixels() {
        let mut bytes = fake_record(3, 128);
        bytes.extend(fake_record(7, 255));
        let parsed = parse_batch(&bytes, 1, Path::new("test.bin")).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].0, vec![3]);
        assert_eq!(parsed[1].0, vec![7]);
        assert!((parsed[0].1[(0, 0, 0)] - 128.0 / 255.0).abs() < 1e-6);
        assert_eq!(parsed[1].1[(31, 31, 2)], 1.0);
    }

    #[test]
    fn truncated_batch_is_corrupt() {
        let bytes = vec![0u8; 3072]; // one byte short of a record
        let err = parse_batch(&bytes, 1, Path::new("test.bin"));
        assert!(matches!(err, Err(Error::CorruptData { .. })));
    }

    #[test]
    fn missing_batch_names_the_split() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar10(dir.path()).unwrap_err();
        match err {
            Error::MissingSplit { split, .. } => assert_eq!(split, "train"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn wrong_count_is_rejected() {
        // correct record framing but only one record per batch
        let dir = tempfile::tempdir().unwrap();
        for i in 1..=5 {
            std::fs::write(
                dir.path().join(format!("data_batch_{i}.bin")),
                fake_record(0, 0),
            )
            .unwrap();
        }
        std::fs::write(dir.path().join("test_batch.bin"), fake_record(0, 0)).unwrap();
        let err = load_cifar10(dir.path()).unwrap_err();
        assert!(matches!(err, Error::SplitCountMismatch { .. }));
    }
}
