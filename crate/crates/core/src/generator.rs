//! View samplers over the local data manifold.
//!
//! Four backends sit behind one interface: nearest-neighbor lookup (the view
//! is a real neighboring record), latent traversal (perturb a generated
//! record's stored latent), instance-conditioned generation (a conditional
//! decoder `G(z, f(x))`), and a ground-truth manifold oracle that draws from
//! a record's nuisance orbit directly. The oracle stands in for an external
//! trained generator at desk scale; its quality knobs (`mode_cap`,
//! `corruption_rate`) produce controlled degradations for ablations.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetHandle, ImageRecord, Split};
use crate::encoder::{embed_batch, EmbeddingMatrix, Encoder};
use crate::error::{Error, Result};
use crate::image_ops::Image;
use crate::knn::{sample_knn_view, NeighborIndex};
use crate::nn::layers::Linear;
use crate::rng::RngStream;

/// Which local-manifold model a backend implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Knn,
    Traversal,
    InstanceConditioned,
    OracleManifold,
}

/// Latent prior: the standard normal, or a uniform draw over a pre-sampled
/// finite set (which bounds the number of distinct views per condition).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum LatentPrior {
    StandardNormal { dim: usize },
    FiniteSet { rows: Array2<f64> },
}

impl LatentPrior {
    pub fn standard_normal(dim: usize) -> Self {
        LatentPrior::StandardNormal { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            LatentPrior::StandardNormal { dim } => *dim,
            LatentPrior::FiniteSet { rows } => rows.ncols(),
        }
    }

    pub fn draw(&self, rng: &mut RngStream) -> Array1<f64> {
        match self {
            LatentPrior::StandardNormal { dim } => {
                let normal = Normal::new(0.0, 1.0).unwrap();
                Array1::from_shape_fn(*dim, |_| normal.sample(rng))
            }
            LatentPrior::FiniteSet { rows } => {
                let pick = rng.random_range(0..rows.nrows());
                rows.row(pick).to_owned()
            }
        }
    }
}

/// Pre-sample `n` latents from N(0, I); later draws are uniform over them.
pub fn restrict_prior_to_finite(dim: usize, n: usize, rng: &mut RngStream) -> Result<LatentPrior> {
    if n < 1 {
        return Err(Error::EmptyFinitePrior);
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows = Array2::from_shape_fn((n, dim), |_| normal.sample(rng));
    Ok(LatentPrior::FiniteSet { rows })
}

/// A perturbation `eps ~ N(0, sigma^2 I)` for latent traversal.
pub const DEFAULT_TRAVERSAL_SIGMA: f64 = 0.2;

pub fn make_traversal_perturbation(
    dim: usize,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<Array1<f64>> {
    if sigma < 0.0 {
        return Err(Error::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(Array1::zeros(dim));
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    Ok(Array1::from_shape_fn(dim, |_| normal.sample(rng)))
}

/// Cached condition vectors `h_i = f(x_i)` keyed by record id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionBank {
    pub embeddings: EmbeddingMatrix,
}

impl ConditionBank {
    pub fn build(encoder: &Encoder, records: &[&ImageRecord]) -> Result<Self> {
        Ok(ConditionBank {
            embeddings: embed_batch(encoder, records)?,
        })
    }

    pub fn lookup(&self, id: usize) -> Option<ArrayView1<'_, f64>> {
        self.embeddings.row_for_id(id)
    }
}

/// A small deterministic decoder: `(z, h) -> image`, two hidden ReLU layers
/// and a sigmoid output reshaped to `resolution x resolution x 3`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorNet {
    pub latent_dim: usize,
    pub condition_dim: usize,
    pub resolution: usize,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

impl GeneratorNet {
    pub fn new(
        latent_dim: usize,
        condition_dim: usize,
        resolution: usize,
        rng: &mut RngStream,
    ) -> Self {
        let in_dim = latent_dim + condition_dim;
        let out_dim = resolution * resolution * 3;
        GeneratorNet {
            latent_dim,
            condition_dim,
            resolution,
            fc1: Linear::new(in_dim, 128, &mut rng.substream("fc1")),
            fc2: Linear::new(128, 256, &mut rng.substream("fc2")),
            fc3: Linear::new(256, out_dim, &mut rng.substream("fc3")),
        }
    }

    /// Pure function of `(latent, condition)`; identical inputs give
    /// identical pixels.
    pub fn generate(
        &self,
        latent: ArrayView1<f64>,
        condition: Option<ArrayView1<f64>>,
    ) -> Result<Image> {
        if latent.len() != self.latent_dim {
            return Err(Error::DimMismatch {
                what: "generator latent".into(),
                expected: self.latent_dim,
                actual: latent.len(),
            });
        }
        let cond_len = condition.map_or(0, |c| c.len());
        if cond_len != self.condition_dim {
            return Err(Error::DimMismatch {
                what: "generator condition".into(),
                expected: self.condition_dim,
                actual: cond_len,
            });
        }
        let mut input = Array2::zeros((1, self.latent_dim + self.condition_dim));
        for (i, &v) in latent.iter().enumerate() {
            input[(0, i)] = v;
        }
        if let Some(cond) = condition {
            for (i, &v) in cond.iter().enumerate() {
                input[(0, self.latent_dim + i)] = v;
            }
        }
        let (h1, _) = self.fc1.forward(&input);
        let h1 = h1.mapv(|v| v.max(0.0));
        let (h2, _) = self.fc2.forward(&h1);
        let h2 = h2.mapv(|v| v.max(0.0));
        let (out, _) = self.fc3.forward(&h2);
        let res = self.resolution;
        let mut img: Image = ndarray::Array3::zeros((res, res, 3));
        for (i, &v) in out.row(0).iter().enumerate() {
            let sig = 1.0 / (1.0 + (-v).exp());
            img[(i / (res * 3), (i / 3) % res, i % 3)] = (sig as f32).clamp(0.0, 1.0);
        }
        Ok(img)
    }
}

/// One of the local-manifold view samplers.
#[derive(Debug, Clone)]
pub enum GeneratorBackend {
    /// Views are the record's nearest neighbors in the dataset.
    Knn {
        index: NeighborIndex,
        dataset: Arc<DatasetHandle>,
    },
    /// Views come from perturbing a generated record's stored latent.
    Traversal { net: GeneratorNet, sigma: f64 },
    /// Views are `G(z, f(x_i))` with `z` from the caller's prior.
    InstanceConditioned {
        net: GeneratorNet,
        bank: Option<ConditionBank>,
    },
    /// Views drawn from the record's ground-truth nuisance orbit, with three
    /// quality knobs emulating an imperfect learned generator: `mode_cap`
    /// limits each orbit to a fixed member subset (diversity collapse),
    /// `corruption_rate` swaps in a wrong-orbit member with the given
    /// probability (semantic drift), and `fidelity_sigma` blurs every sample
    /// (sub-real render quality).
    OracleManifold {
        dataset: Arc<DatasetHandle>,
        orbits: BTreeMap<usize, Vec<usize>>,
        mode_cap: Option<usize>,
        corruption_rate: f64,
        fidelity_sigma: f64,
    },
}

impl GeneratorBackend {
    pub fn kind(&self) -> BackendKind {
        match self {
            GeneratorBackend::Knn { .. } => BackendKind::Knn,
            GeneratorBackend::Traversal { .. } => BackendKind::Traversal,
            GeneratorBackend::InstanceConditioned { .. } => BackendKind::InstanceConditioned,
            GeneratorBackend::OracleManifold { .. } => BackendKind::OracleManifold,
        }
    }

    pub fn resolution(&self) -> usize {
        match self {
            GeneratorBackend::Knn { dataset, .. } => dataset.resolution(),
            GeneratorBackend::Traversal { net, .. } => net.resolution,
            GeneratorBackend::InstanceConditioned { net, .. } => net.resolution,
            GeneratorBackend::OracleManifold { dataset, .. } => dataset.resolution(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            GeneratorBackend::Traversal { net, .. } => net.latent_dim,
            GeneratorBackend::InstanceConditioned { net, .. } => net.latent_dim,
            _ => 0,
        }
    }

    pub fn condition_dim(&self) -> usize {
        match self {
            GeneratorBackend::InstanceConditioned { net, .. } => net.condition_dim,
            _ => 0,
        }
    }

    /// Oracle over the ground-truth orbits of `split` (all records when
    /// `None`). Restricting to the train split keeps held-out views unseen.
    pub fn oracle_manifold(dataset: Arc<DatasetHandle>, split: Option<Split>) -> Self {
        let orbits = match split {
            Some(s) => dataset.orbit_members_in(s),
            None => dataset.orbit_members(),
        };
        GeneratorBackend::OracleManifold {
            dataset,
            orbits,
            mode_cap: None,
            corruption_rate: 0.0,
            fidelity_sigma: 0.0,
        }
    }

    /// Cap each orbit to a fixed pseudo-random subset of `cap` members.
    pub fn with_mode_cap(self, cap: usize, seed: u64) -> Self {
        match self {
            GeneratorBackend::OracleManifold {
                dataset,
                mut orbits,
                corruption_rate,
                fidelity_sigma,
                ..
            } => {
                for (orbit, members) in orbits.iter_mut() {
                    let mut rng = RngStream::new(format!("mode-cap/{orbit}"), seed);
                    use rand::seq::SliceRandom;
                    members.shuffle(&mut rng);
                    members.truncate(cap.max(1));
                    members.sort_unstable();
                }
                GeneratorBackend::OracleManifold {
                    dataset,
                    orbits,
                    mode_cap: Some(cap.max(1)),
                    corruption_rate,
                    fidelity_sigma,
                }
            }
            other => other,
        }
    }

    pub fn with_corruption(self, rate: f64) -> Self {
        match self {
            GeneratorBackend::OracleManifold {
                dataset,
                orbits,
                mode_cap,
                fidelity_sigma,
                ..
            } => GeneratorBackend::OracleManifold {
                dataset,
                orbits,
                mode_cap,
                corruption_rate: rate.clamp(0.0, 1.0),
                fidelity_sigma,
            },
            other => other,
        }
    }

    /// Blur every oracle sample with the given sigma (0 disables), emulating
    /// a generator whose renders fall short of real data.
    pub fn with_fidelity_sigma(self, sigma: f64) -> Self {
        match self {
            GeneratorBackend::OracleManifold {
                dataset,
                orbits,
                mode_cap,
                corruption_rate,
                ..
            } => GeneratorBackend::OracleManifold {
                dataset,
                orbits,
                mode_cap,
                corruption_rate,
                fidelity_sigma: sigma.max(0.0),
            },
            other => other,
        }
    }
}

/// Sample one view of `x_i` from the backend's local distribution.
///
/// - kNN: a uniformly drawn member of the record's neighbor set.
/// - traversal: `G(z_i + eps)` from the record's stored latent.
/// - instance-conditioned: `G(z, f(x_i))` with `z` from `prior` and the
///   condition from the bank cache or recomputed via `embedder`.
/// - manifold oracle: a uniformly drawn member of the record's orbit (the
///   latent is unused; the local distribution is the orbit itself).
pub fn sample_view(
    backend: &GeneratorBackend,
    x_i: &ImageRecord,
    prior: &LatentPrior,
    embedder: Option<&Encoder>,
    rng: &mut RngStream,
) -> Result<Image> {
    match backend {
        GeneratorBackend::Knn { index, dataset } => {
            let pick = sample_knn_view(index, x_i.id, rng)?;
            let rec = dataset.get(pick).ok_or(Error::UnknownId(pick))?;
            Ok(rec.pixels.clone())
        }
        GeneratorBackend::Traversal { net, sigma } => {
            let latent = x_i
                .latent
                .as_ref()
                .ok_or(Error::MissingLatent(x_i.id))?;
            if latent.len() != net.latent_dim {
                return Err(Error::DimMismatch {
                    what: "stored latent".into(),
                    expected: net.latent_dim,
                    actual: latent.len(),
                });
            }
            let eps = make_traversal_perturbation(net.latent_dim, *sigma, rng)?;
            let z = Array1::from_vec(latent.clone()) + &eps;
            net.generate(z.view(), None)
        }
        GeneratorBackend::InstanceConditioned { net, bank } => {
            let z = prior.draw(rng);
            let cached = bank.as_ref().and_then(|b| b.lookup(x_i.id));
            let condition: Array1<f64> = match cached {
                Some(row) => row.to_owned(),
                None => {
                    let embedder = embedder.ok_or_else(|| Error::DimMismatch {
                        what: "condition embedder (none supplied and no bank hit)".into(),
                        expected: net.condition_dim,
                        actual: 0,
                    })?;
                    embedder
                        .embed_pixels(&[&x_i.pixels])?
                        .row(0)
                        .to_owned()
                }
            };
            net.generate(z.view(), Some(condition.view()))
        }
        GeneratorBackend::OracleManifold {
            dataset,
            orbits,
            corruption_rate,
            fidelity_sigma,
            ..
        } => {
            let orbit = x_i.orbit_id.ok_or(Error::MissingOrbit(x_i.id))?;
            let members = orbits.get(&orbit).ok_or(Error::MissingOrbit(x_i.id))?;
            let corrupted = *corruption_rate > 0.0 && rng.random::<f64>() < *corruption_rate;
            let pick = if corrupted {
                let others: Vec<usize> = orbits
                    .iter()
                    .filter(|(o, _)| **o != orbit)
                    .flat_map(|(_, m)| m.iter().copied())
                    .collect();
                if others.is_empty() {
                    members[rng.random_range(0..members.len())]
                } else {
                    others[rng.random_range(0..others.len())]
                }
            } else {
                members[rng.random_range(0..members.len())]
            };
            let rec = dataset.get(pick).ok_or(Error::UnknownId(pick))?;
            if *fidelity_sigma > 0.0 {
                Ok(crate::image_ops::gaussian_blur(
                    &rec.pixels,
                    *fidelity_sigma as f32,
                ))
            } else {
                Ok(rec.pixels.clone())
            }
        }
    }
}

// ── Checkpoints ─────────────────────────────────────────────────────────────

const GENERATOR_SCHEMA: &str = "lma-generator-v1";

#[derive(Serialize, Deserialize)]
struct GeneratorFile {
    schema: String,
    kind: BackendKind,
    net: GeneratorNet,
    sigma: Option<f64>,
}

/// Persist a decoder-backed backend (traversal or instance-conditioned).
pub fn save_generator_checkpoint(backend: &GeneratorBackend, path: &Path) -> Result<()> {
    let (kind, net, sigma) = match backend {
        GeneratorBackend::Traversal { net, sigma } => {
            (BackendKind::Traversal, net.clone(), Some(*sigma))
        }
        GeneratorBackend::InstanceConditioned { net, .. } => {
            (BackendKind::InstanceConditioned, net.clone(), None)
        }
        other => {
            return Err(Error::Checkpoint {
                path: path.display().to_string(),
                detail: format!("{:?} backends are rebuilt from data, not checkpointed", other.kind()),
            })
        }
    };
    let file = GeneratorFile {
        schema: GENERATOR_SCHEMA.into(),
        kind,
        net,
        sigma,
    };
    std::fs::write(path, serde_json::to_string(&file)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a decoder-backed backend, checking the requested kind.
pub fn load_generator_checkpoint(path: &Path, kind: BackendKind) -> Result<GeneratorBackend> {
    let raw =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: GeneratorFile = serde_json::from_str(&raw).map_err(|e| Error::Checkpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if file.schema != GENERATOR_SCHEMA {
        return Err(Error::Checkpoint {
            path: path.display().to_string(),
            detail: format!("unknown schema `{}`", file.schema),
        });
    }
    if file.kind != kind {
        return Err(Error::Checkpoint {
            path: path.display().to_string(),
            detail: format!("checkpoint holds a {:?} backend, requested {kind:?}", file.kind),
        });
    }
    match kind {
        BackendKind::Traversal => Ok(GeneratorBackend::Traversal {
            net: file.net,
            sigma: file.sigma.unwrap_or(DEFAULT_TRAVERSAL_SIGMA),
        }),
        BackendKind::InstanceConditioned => Ok(GeneratorBackend::InstanceConditioned {
            net: file.net,
            bank: None,
        }),
        other => Err(Error::Checkpoint {
            path: path.display().to_string(),
            detail: format!("{other:?} backends are rebuilt from data, not checkpointed"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic_manifold, NuisanceFactor};
    use crate::image_ops::image_digest;
    use crate::knn::{build_index, query_knn, Query};
    use std::collections::BTreeSet;

    fn oracle_setup() -> (Arc<DatasetHandle>, GeneratorBackend) {
        let ds = Arc::new(
            make_synthetic_manifold(4, 20, &[NuisanceFactor::Hue], 12, 5).unwrap(),
        );
        let backend = GeneratorBackend::oracle_manifold(ds.clone(), None);
        (ds, backend)
    }

    #[test]
    fn oracle_views_share_the_orbit() {
        let (ds, backend) = oracle_setup();
        let prior = LatentPrior::standard_normal(4);
        let mut rng = RngStream::new("oracle", 0);
        let rec = ds.get(7).unwrap();
        for _ in 0..500 {
            let view = sample_view(&backend, rec, &prior, None, &mut rng).unwrap();
            let digest = image_digest(&view);
            let matching = ds
                .records()
                .iter()
                .find(|r| image_digest(&r.pixels) == digest)
                .expect("view must be a dataset member");
            assert_eq!(matching.orbit_id, rec.orbit_id);
        }
    }

    #[test]
    fn oracle_requires_orbits() {
        let (ds, backend) = oracle_setup();
        let mut rec = ds.get(0).unwrap().clone();
        rec.orbit_id = None;
        let prior = LatentPrior::standard_normal(4);
        let mut rng = RngStream::new("oracle", 1);
        assert!(matches!(
            sample_view(&backend, &rec, &prior, None, &mut rng),
            Err(Error::MissingOrbit(0))
        ));
    }

    #[test]
    fn mode_cap_limits_distinct_views() {
        let (ds, backend) = oracle_setup();
        let backend = backend.with_mode_cap(3, 11);
        let prior = LatentPrior::standard_normal(4);
        let mut rng = RngStream::new("cap", 0);
        let rec = ds.get(0).unwrap();
        let mut seen = BTreeSet::new();
        for _ in 0..200 {
            let view = sample_view(&backend, rec, &prior, None, &mut rng).unwrap();
            seen.insert(image_digest(&view));
        }
        assert!(seen.len() <= 3, "saw {} distinct views", seen.len());
    }

    #[test]
    fn corruption_mixes_other_orbits() {
        let (ds, backend) = oracle_setup();
        let backend = backend.with_corruption(0.5);
        let prior = LatentPrior::standard_normal(4);
        let mut rng = RngStream::new("corrupt", 0);
        let rec = ds.get(0).unwrap();
        let mut wrong = 0;
        let draws = 400;
        for _ in 0..draws {
            let view = sample_view(&backend, rec, &prior, None, &mut rng).unwrap();
            let digest = image_digest(&view);
            let matching = ds
                .records()
                .iter()
                .find(|r| image_digest(&r.pixels) == digest)
                .unwrap();
            if matching.orbit_id != rec.orbit_id {
                wrong += 1;
            }
        }
        // expect roughly half (wrong-orbit picks can never collide back)
        assert!(wrong > draws / 4 && wrong < draws * 3 / 4, "wrong={wrong}");
    }

    #[test]
    fn instance_conditioned_is_deterministic_given_inputs() {
        let mut rng = RngStream::new("gen", 0);
        let net = GeneratorNet::new(6, 5, 8, &mut rng);
        let z = Array1::from_vec(vec![0.1, -0.2, 0.3, 0.0, 1.0, -1.0]);
        let h = Array1::from_vec(vec![0.5, 0.5, -0.5, 0.2, 0.9]);
        let a = net.generate(z.view(), Some(h.view())).unwrap();
        let b = net.generate(z.view(), Some(h.view())).unwrap();
        assert_eq!(a, b);
        crate::image_ops::validate_pixels(&a).unwrap();
    }

    #[test]
    fn condition_dim_mismatch_rejected() {
        let mut rng = RngStream::new("gen", 1);
        let net = GeneratorNet::new(4, 8, 8, &mut rng);
        let z = Array1::zeros(4);
        let h = Array1::zeros(5);
        assert!(matches!(
            net.generate(z.view(), Some(h.view())),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn traversal_zero_sigma_reproduces_the_stored_latent_image() {
        let mut rng = RngStream::new("gen", 2);
        let net = GeneratorNet::new(5, 0, 8, &mut rng);
        let z = Array1::from_vec(vec![0.3, -0.1, 0.0, 0.7, -0.9]);
        let direct = net.generate(z.view(), None).unwrap();

        let backend = GeneratorBackend::Traversal {
            net,
            sigma: 0.0,
        };
        let mut rec = ImageRecord::new(0, direct.clone(), Split::Train);
        rec.latent = Some(z.to_vec());
        let prior = LatentPrior::standard_normal(5);
        let mut draw_rng = RngStream::new("trav", 0);
        let out = sample_view(&backend, &rec, &prior, None, &mut draw_rng).unwrap();
        assert_eq!(out, direct);
    }

    #[test]
    fn traversal_without_latent_errors() {
        let mut rng = RngStream::new("gen", 3);
        let net = GeneratorNet::new(5, 0, 8, &mut rng);
        let backend = GeneratorBackend::Traversal { net, sigma: 0.2 };
        let rec = ImageRecord::new(
            3,
            ndarray::Array3::from_elem((8, 8, 3), 0.5),
            Split::Train,
        );
        let prior = LatentPrior::standard_normal(5);
        let mut draw_rng = RngStream::new("trav", 1);
        assert!(matches!(
            sample_view(&backend, &rec, &prior, None, &mut draw_rng),
            Err(Error::MissingLatent(3))
        ));
    }

    #[test]
    fn perturbation_stats_match_sigma() {
        let mut rng = RngStream::new("eps", 0);
        let dim = 4;
        let sigma = 0.2;
        let n = 100_000;
        let mut sums = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        for _ in 0..n {
            let eps = make_traversal_perturbation(dim, sigma, &mut rng).unwrap();
            for (i, &v) in eps.iter().enumerate() {
                sums[i] += v;
                sq[i] += v * v;
            }
        }
        let se_mean = sigma / (n as f64).sqrt();
        let se_std = sigma / (2.0 * (n as f64 - 1.0)).sqrt();
        for i in 0..dim {
            let mean = sums[i] / n as f64;
            let std = (sq[i] / n as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 3.0 * se_mean, "mean {mean}");
            assert!((std - sigma).abs() < 3.0 * se_std, "std {std}");
        }
    }

    #[test]
    fn perturbation_edge_cases() {
        let mut rng = RngStream::new("eps", 1);
        let zero = make_traversal_perturbation(6, 0.0, &mut rng).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        assert!(matches!(
            make_traversal_perturbation(6, -0.1, &mut rng),
            Err(Error::NegativeSigma(_))
        ));
    }

    #[test]
    fn standard_normal_prior_statistics() {
        let prior = LatentPrior::standard_normal(4);
        let mut rng = RngStream::new("prior", 0);
        let n = 100_000;
        let mut sums = vec![0.0f64; 4];
        let mut sq = vec![0.0f64; 4];
        for _ in 0..n {
            let z = prior.draw(&mut rng);
            for (i, &v) in z.iter().enumerate() {
                sums[i] += v;
                sq[i] += v * v;
            }
        }
        let se_mean = 1.0 / (n as f64).sqrt();
        let se_std = 1.0 / (2.0 * (n as f64 - 1.0)).sqrt();
        for i in 0..4 {
            let mean = sums[i] / n as f64;
            let std = (sq[i] / n as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 3.0 * se_mean);
            assert!((std - 1.0).abs() < 3.0 * se_std);
        }
    }

    #[test]
    fn finite_prior_bounds_distinct_outputs() {
        let mut rng = RngStream::new("finite", 0);
        assert!(restrict_prior_to_finite(4, 0, &mut rng).is_err());

        let net = GeneratorNet::new(4, 2, 8, &mut RngStream::new("gen", 4));
        let h = Array1::from_vec(vec![0.3, -0.3]);

        // n = 1: every view identical
        let prior1 = restrict_prior_to_finite(4, 1, &mut rng).unwrap();
        let mut draws = RngStream::new("draws", 0);
        let first = net
            .generate(prior1.draw(&mut draws).view(), Some(h.view()))
            .unwrap();
        for _ in 0..10 {
            let again = net
                .generate(prior1.draw(&mut draws).view(), Some(h.view()))
                .unwrap();
            assert_eq!(first, again);
        }

        // n = 50: at most 50 distinct outputs by pigeonhole
        let prior50 = restrict_prior_to_finite(4, 50, &mut rng).unwrap();
        let mut seen = BTreeSet::new();
        for _ in 0..500 {
            let img = net
                .generate(prior50.draw(&mut draws).view(), Some(h.view()))
                .unwrap();
            seen.insert(image_digest(&img));
        }
        assert!(seen.len() <= 50);
    }

    #[test]
    fn knn_backend_views_are_real_neighbors() {
        let ds = Arc::new(
            make_synthetic_manifold(3, 10, &[NuisanceFactor::Hue], 12, 9).unwrap(),
        );
        let enc = Encoder::oracle_linear(12, 16, 0, true);
        let recs: Vec<_> = ds.records().iter().collect();
        let emb = embed_batch(&enc, &recs).unwrap();
        let index = build_index(emb, 5, true).unwrap();
        let neighbor_ids: BTreeSet<usize> = query_knn(&index, Query::Id(4), 5)
            .unwrap()
            .iter()
            .map(|(id, _)| *id)
            .collect();
        let backend = GeneratorBackend::Knn {
            index,
            dataset: ds.clone(),
        };
        let prior = LatentPrior::standard_normal(1);
        let mut rng = RngStream::new("knn-backend", 0);
        let rec = ds.get(4).unwrap();
        for _ in 0..50 {
            let view = sample_view(&backend, rec, &prior, None, &mut rng).unwrap();
            let digest = image_digest(&view);
            let found = neighbor_ids
                .iter()
                .any(|&id| image_digest(&ds.get(id).unwrap().pixels) == digest);
            assert!(found, "sampled view is not one of the k neighbors");
        }
    }

    #[test]
    fn generator_checkpoint_round_trip() {
        let mut rng = RngStream::new("gen", 6);
        let net = GeneratorNet::new(4, 3, 8, &mut rng);
        let backend = GeneratorBackend::InstanceConditioned { net, bank: None };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("generator.json");
        save_generator_checkpoint(&backend, &path).unwrap();

        let loaded = load_generator_checkpoint(&path, BackendKind::InstanceConditioned).unwrap();
        let z = Array1::from_vec(vec![0.2, -0.4, 0.6, 0.0]);
        let h = Array1::from_vec(vec![1.0, 0.0, -1.0]);
        let (GeneratorBackend::InstanceConditioned { net: a, .. },
             GeneratorBackend::InstanceConditioned { net: b, .. }) = (&backend, &loaded)
        else {
            panic!()
        };
        assert_eq!(
            a.generate(z.view(), Some(h.view())).unwrap(),
            b.generate(z.view(), Some(h.view())).unwrap()
        );

        // kind mismatch rejected
        assert!(load_generator_checkpoint(&path, BackendKind::Traversal).is_err());
    }
}
