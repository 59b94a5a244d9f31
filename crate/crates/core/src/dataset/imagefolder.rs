//! Directory-of-JPEGs loader for the 100-class ImageNet subset.
//!
//! Expects `root/train/<class>/*` and `root/val/<class>/*`. The class list is
//! configurable because the subset's class selection is a convention, not
//! part of the on-disk layout; when absent, the sorted train directory names
//! are used.

use std::fs;
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::image_ops::{crop, resize_bilinear, Image};

use super::{DatasetHandle, ImageRecord, Split};

fn decode_and_square(path: &Path, resolution: usize) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::CorruptData {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut full: Image = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            full[(y as usize, x as usize, c)] = p.0[c] as f32 / 255.0;
        }
    }
    // resize the shorter side to `resolution`, then center-crop
    let (h, w) = (h as usize, w as usize);
    let (rh, rw) = if h <= w {
        (resolution, (w * resolution).div_ceil(h))
    } else {
        ((h * resolution).div_ceil(w), resolution)
    };
    let resized = resize_bilinear(&full, rh, rw);
    let top = (rh - resolution) / 2;
    let left = (rw - resolution) / 2;
    Ok(crop(&resized, top, left, resolution, resolution))
}

fn class_dirs(split_dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    let entries = fs::read_dir(split_dir)
        .map_err(|e| Error::io(split_dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(split_dir.display().to_string(), e))?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn load_split(
    root: &Path,
    split: Split,
    classes: &[String],
    resolution: usize,
    records: &mut Vec<ImageRecord>,
) -> Result<usize> {
    let split_dir = root.join(split.as_str());
    if !split_dir.is_dir() {
        return Err(Error::MissingSplit {
            name: "imagenet100".into(),
            split: split.to_string(),
            detail: format!("{} is not a directory", split_dir.display()),
        });
    }
    let mut count = 0;
    for (class_idx, class) in classes.iter().enumerate() {
        let class_dir = split_dir.join(class);
        if !class_dir.is_dir() {
            return Err(Error::MissingSplit {
                name: "imagenet100".into(),
                split: split.to_string(),
                detail: format!("class directory {} missing", class_dir.display()),
            });
        }
        let mut files: Vec<_> = fs::read_dir(&class_dir)
            .map_err(|e| Error::io(class_dir.display().to_string(), e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            let mut rec =
                ImageRecord::new(records.len(), decode_and_square(&file, resolution)?, split);
            rec.label = Some(class_idx);
            records.push(rec);
            count += 1;
        }
    }
    Ok(count)
}

/// Load the 100-class ImageNet subset: 126,689 train / 5,000 val images.
pub fn load_imagenet100(
    root: &Path,
    class_list: Option<&[String]>,
    resolution: usize,
) -> Result<DatasetHandle> {
    let classes: Vec<String> = match class_list {
        Some(list) => list.to_vec(),
        None => class_dirs(&root.join("train")).map_err(|_| Error::MissingSplit {
            name: "imagenet100".into(),
            split: Split::Train.to_string(),
            detail: format!("no train/ directory under {}", root.display()),
        })?,
    };
    if classes.len() != 100 {
        return Err(Error::CorruptData {
            path: root.display().to_string(),
            detail: format!("expected 100 classes, found {}", classes.len()),
        });
    }
    let mut records = Vec::new();
    let train = load_split(root, Split::Train, &classes, resolution, &mut records)?;
    if train != 126_689 {
        return Err(Error::SplitCountMismatch {
            name: "imagenet100".into(),
            split: Split::Train.to_string(),
            expected: 126_689,
            actual: train,
        });
    }
    let val = load_split(root, Split::Val, &classes, resolution, &mut records)?;
    if val != 5_000 {
        return Err(Error::SplitCountMismatch {
            name: "imagenet100".into(),
            split: Split::Val.to_string(),
            expected: 5_000,
            actual: val,
        });
    }
    DatasetHandle::from_records("imagenet100", resolution, 100, records)
}
