//! Dataset ingestion, deterministic sampling, and the synthetic-manifold
//! dataset used for desk-scale verification.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_ops::{validate_pixels, Image};
use crate::rng::RngStream;

mod cifar;
mod imagefolder;
pub mod manifest;
mod stl10;
pub mod synthetic;

pub use synthetic::{make_synthetic_manifold, NuisanceFactor};

/// Dataset split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unlabeled,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unlabeled" => Ok(Split::Unlabeled),
            other => Err(Error::CorruptData {
                path: "<split tag>".into(),
                detail: format!("unknown split `{other}`"),
            }),
        }
    }
}

/// One image with its id, optional label, and optional ground-truth orbit.
///
/// `orbit_id` is present for every record of a synthetic dataset and names the
/// underlying visual concept; `latent` is present only for generator-born
/// records and stores the latent the image was produced from.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub id: usize,
    pub pixels: Image,
    pub label: Option<usize>,
    pub orbit_id: Option<usize>,
    pub split: Split,
    pub latent: Option<Vec<f64>>,
    /// Nuisance-factor values used to render this record (synthetic datasets).
    pub factors: BTreeMap<String, f64>,
}

impl ImageRecord {
    pub fn new(id: usize, pixels: Image, split: Split) -> Self {
        ImageRecord {
            id,
            pixels,
            label: None,
            orbit_id: None,
            split,
            latent: None,
            factors: BTreeMap::new(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.pixels.dim().0
    }
}

/// An immutable, fully loaded dataset.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    name: String,
    resolution: usize,
    num_classes: usize,
    records: Vec<ImageRecord>,
    split_ids: BTreeMap<Split, Vec<usize>>,
}

impl DatasetHandle {
    /// Build a handle from records, checking the dataset invariants:
    /// sequential ids, uniform resolution, pixels in [0, 1], and (when any
    /// record carries an orbit) orbits that partition the dataset.
    pub fn from_records(
        name: impl Into<String>,
        resolution: usize,
        num_classes: usize,
        records: Vec<ImageRecord>,
    ) -> Result<Self> {
        let name = name.into();
        let mut split_ids: BTreeMap<Split, Vec<usize>> = BTreeMap::new();
        let any_orbit = records.iter().any(|r| r.orbit_id.is_some());
        for (i, rec) in records.iter().enumerate() {
            if rec.id != i {
                return Err(Error::CorruptData {
                    path: name.clone(),
                    detail: format!("record {i} has id {}", rec.id),
                });
            }
            let (h, w, _) = rec.pixels.dim();
            if h != resolution || w != resolution {
                return Err(Error::CorruptData {
                    path: name.clone(),
                    detail: format!("record {i} is {h}x{w}, dataset resolution is {resolution}"),
                });
            }
            validate_pixels(&rec.pixels)?;
            if any_orbit && rec.orbit_id.is_none() {
                return Err(Error::CorruptData {
                    path: name.clone(),
                    detail: format!("record {i} lacks orbit_id in an orbit-labeled dataset"),
                });
            }
            split_ids.entry(rec.split).or_default().push(rec.id);
        }
        Ok(DatasetHandle {
            name,
            resolution,
            num_classes,
            records,
            split_ids,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&ImageRecord> {
        self.records.get(id)
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    /// Record ids belonging to `split`, in id order.
    pub fn split_ids(&self, split: Split) -> &[usize] {
        self.split_ids.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        self.split_ids
            .iter()
            .map(|(s, ids)| (*s, ids.len()))
            .collect()
    }

    pub fn iter_split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.split_ids(split).iter().map(move |&id| &self.records[id])
    }

    /// Orbit id -> member record ids, for datasets with ground-truth orbits.
    pub fn orbit_members(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for rec in &self.records {
            if let Some(orbit) = rec.orbit_id {
                map.entry(orbit).or_default().push(rec.id);
            }
        }
        map
    }

    /// Like [`orbit_members`](Self::orbit_members) restricted to one split.
    pub fn orbit_members_in(&self, split: Split) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for rec in self.iter_split(split) {
            if let Some(orbit) = rec.orbit_id {
                map.entry(orbit).or_default().push(rec.id);
            }
        }
        map
    }

    /// Move `val_fraction` of every orbit (or of the whole train split when
    /// no orbits exist) from train to val, choosing members with the given
    /// seed. Returns a new handle; the original split assignment is consumed.
    pub fn with_holdout(mut self, val_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::InvalidConfig(vec![format!(
                "val_fraction must be in [0, 1), got {val_fraction}"
            )]));
        }
        let mut rng = RngStream::new("holdout", seed);
        let groups: Vec<Vec<usize>> = if self.records.iter().any(|r| r.orbit_id.is_some()) {
            self.orbit_members().into_values().collect()
        } else {
            vec![self.split_ids(Split::Train).to_vec()]
        };
        for group in groups {
            let mut ids = group;
            ids.shuffle(&mut rng);
            let n_val = ((ids.len() as f64) * val_fraction).round() as usize;
            for &id in ids.iter().take(n_val) {
                self.records[id].split = Split::Val;
            }
        }
        let records = std::mem::take(&mut self.records);
        DatasetHandle::from_records(self.name, self.resolution, self.num_classes, records)
    }
}

/// Load one of the supported datasets from its standard on-disk layout.
///
/// Supported names: `cifar10`, `cifar100`, `stl10`, `imagenet100`, and
/// `manifest` (a directory written by [`manifest::save_manifest`]).
pub fn load_dataset(name: &str, root: &Path) -> Result<DatasetHandle> {
    match name.to_ascii_lowercase().as_str() {
        "cifar10" => cifar::load_cifar10(root),
        "cifar100" => cifar::load_cifar100(root),
        "stl10" => stl10::load_stl10(root),
        "imagenet100" => imagefolder::load_imagenet100(root, None, 96),
        "manifest" => manifest::load_manifest(root),
        other => Err(Error::UnknownDataset(other.to_string())),
    }
}

/// Sample `batch` records from `split` without replacement.
pub fn sample_minibatch<'a>(
    handle: &'a DatasetHandle,
    split: Split,
    batch: usize,
    rng: &mut RngStream,
) -> Result<Vec<&'a ImageRecord>> {
    let ids = handle.split_ids(split);
    if batch > ids.len() {
        return Err(Error::BatchTooLarge {
            requested: batch,
            available: ids.len(),
        });
    }
    let picks = rand::seq::index::sample(rng, ids.len(), batch);
    Ok(picks.iter().map(|i| &handle.records()[ids[i]]).collect())
}

/// The shuffled order of `split` for one epoch, derived from `(seed, epoch)`.
///
/// Over one epoch the returned ids cover the split exactly once, so chunking
/// the permutation into batches yields every record once per epoch.
pub fn epoch_permutation(
    handle: &DatasetHandle,
    split: Split,
    seed: u64,
    epoch: usize,
) -> Vec<usize> {
    let mut ids = handle.split_ids(split).to_vec();
    let mut rng = RngStream::new(format!("epoch/{epoch}"), seed);
    ids.shuffle(&mut rng);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn tiny() -> DatasetHandle {
        make_synthetic_manifold(3, 10, &[NuisanceFactor::Rotation], 16, 9).unwrap()
    }

    #[test]
    fn minibatch_ids_distinct_and_deterministic() {
        let ds = tiny();
        let mut rng = RngStream::new("mb", 1);
        let batch = sample_minibatch(&ds, Split::Train, 8, &mut rng).unwrap();
        let ids: BTreeSet<usize> = batch.iter().map(|r| r.id).collect();
        assert_eq!(ids.len(), 8);

        let mut rng2 = RngStream::new("mb", 1);
        let batch2 = sample_minibatch(&ds, Split::Train, 8, &mut rng2).unwrap();
        let ids2: Vec<usize> = batch2.iter().map(|r| r.id).collect();
        let ids1: Vec<usize> = batch.iter().map(|r| r.id).collect();
        assert_eq!(ids1, ids2);
    }

    #[test]
    fn minibatch_larger_than_split_errors() {
        let ds = tiny();
        let mut rng = RngStream::new("mb", 1);
        let n = ds.split_ids(Split::Train).len();
        let err = sample_minibatch(&ds, Split::Train, n + 1, &mut rng);
        assert!(matches!(err, Err(Error::BatchTooLarge { .. })));
    }

    #[test]
    fn epoch_covers_split_exactly_once() {
        let ds = tiny();
        let perm = epoch_permutation(&ds, Split::Train, 5, 0);
        let expected: BTreeSet<usize> = ds.split_ids(Split::Train).iter().copied().collect();
        let got: BTreeSet<usize> = perm.iter().copied().collect();
        assert_eq!(perm.len(), expected.len());
        assert_eq!(got, expected);
        // different epochs shuffle differently
        let perm1 = epoch_permutation(&ds, Split::Train, 5, 1);
        assert_ne!(perm, perm1);
        // same (seed, epoch) replays
        assert_eq!(perm, epoch_permutation(&ds, Split::Train, 5, 0));
    }

    #[test]
    fn holdout_splits_every_orbit() {
        let ds = tiny().with_holdout(0.2, 3).unwrap();
        let train = ds.orbit_members_in(Split::Train);
        let val = ds.orbit_members_in(Split::Val);
        assert_eq!(train.len(), 3);
        assert_eq!(val.len(), 3);
        for (orbit, members) in &val {
            assert_eq!(members.len(), 2, "orbit {orbit} should hold out 2 of 10");
        }
    }

    #[test]
    fn orbits_partition_dataset() {
        let ds = tiny();
        let total: usize = ds.orbit_members().values().map(Vec::len).sum();
        assert_eq!(total, ds.len());
    }

    #[test]
    fn unknown_dataset_name_errors() {
        let err = load_dataset("mnist", Path::new("/nonexistent"));
        assert!(matches!(err, Err(Error::UnknownDataset(_))));
    }
}
