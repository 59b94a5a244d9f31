//! Representation evaluation: linear probing on frozen features,
//! group-invariance metrics (mean pairwise cosine, Mahalanobis distance to
//! the group mean under the global covariance), Fréchet feature distance,
//! and shifted-distribution accuracy.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetHandle, Split};
use crate::encoder::{embed_batch, EmbeddingMatrix, Encoder};
use crate::error::{Error, Result};
use crate::nn::layers::Linear;
use crate::nn::{lars_step, softmax_cross_entropy, zero_grads, LarsConfig};
use crate::rng::RngStream;
use crate::train::{cosine_lr, scaled_lr};

// ── Linear probe ────────────────────────────────────────────────────────────

/// Probe optimizer settings: SGD with layer-adaptive scaling and a cosine
/// schedule. The documented protocol trains batch 4096 for 90 epochs; the
/// desk-scale constructor shrinks that to batch 256 / 30 epochs with the
/// same schedule shape.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LinearProbeConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        LinearProbeConfig {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 4096,
            epochs: 90,
            seed: 0,
        }
    }
}

impl LinearProbeConfig {
    pub fn desk_defaults() -> Self {
        LinearProbeConfig {
            base_lr: 0.4,
            batch_size: 256,
            epochs: 60,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.base_lr <= 0.0 {
            issues.push(format!("probe base_lr must be positive, got {}", self.base_lr));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            issues.push("probe batch_size and epochs must be >= 1".into());
        }
        issues
    }
}

/// A trained single-layer classifier over frozen features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearProbe {
    layer: Linear,
    pub classes: usize,
}

impl LinearProbe {
    pub fn logits(&self, features: &Array2<f64>) -> Array2<f64> {
        self.layer.forward(features).0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub top1: f64,
    pub top5: f64,
    pub encoder_hash: String,
}

/// Top-k accuracy in percent.
fn top_k_accuracy(logits: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
    let mut hits = 0usize;
    for (row, &label) in logits.outer_iter().zip(labels.iter()) {
        let mut scored: Vec<(usize, f64)> = row.iter().cloned().enumerate().collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        if scored.iter().take(k).any(|&(cls, _)| cls == label) {
            hits += 1;
        }
    }
    100.0 * hits as f64 / labels.len() as f64
}

/// Fit a linear classifier on fixed features.
pub fn fit_probe(
    features: &Array2<f64>,
    labels: &[usize],
    classes: usize,
    cfg: &LinearProbeConfig,
) -> LinearProbe {
    let mut rng = RngStream::new("probe-init", cfg.seed);
    let mut layer = Linear::new(features.ncols(), classes, &mut rng);
    let n = features.nrows();
    let batch = cfg.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = steps_per_epoch * cfg.epochs;
    let effective = scaled_lr(cfg.base_lr, batch);
    let lars = LarsConfig {
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut epoch_rng = RngStream::new(format!("probe-epoch/{epoch}"), cfg.seed);
        order.shuffle(&mut epoch_rng);
        for chunk in order.chunks(batch) {
            let mut x = Array2::zeros((chunk.len(), features.ncols()));
            let mut y = Vec::with_capacity(chunk.len());
            for (i, &idx) in chunk.iter().enumerate() {
                x.row_mut(i).assign(&features.row(idx));
                y.push(labels[idx]);
            }
            let lr = cosine_lr(step, total_steps, effective).expect("step within schedule");
            zero_grads(layer.params_mut());
            let (logits, cache) = layer.forward(&x);
            let (_, dlogits) = softmax_cross_entropy(&logits, &y);
            layer.backward(&cache, &dlogits);
            lars_step(layer.params_mut(), lr, lars);
            step += 1;
        }
    }
    LinearProbe { layer, classes }
}

fn labeled_features(
    encoder: &Encoder,
    dataset: &DatasetHandle,
    split: Split,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let records: Vec<_> = dataset
        .iter_split(split)
        .filter(|r| r.label.is_some())
        .collect();
    if records.is_empty() {
        return Err(Error::Unlabeled(split.to_string()));
    }
    let emb = embed_batch(encoder, &records)?;
    let labels = records.iter().map(|r| r.label.unwrap()).collect();
    Ok((emb.values, labels))
}

/// The split a probe should be scored on: val when present, else test.
pub fn eval_split(dataset: &DatasetHandle) -> Split {
    if !dataset.split_ids(Split::Val).is_empty() {
        Split::Val
    } else {
        Split::Test
    }
}

/// Train a linear classifier on the frozen encoder's train-split features
/// and report top-1/top-5 accuracy on the evaluation split. The encoder is
/// shared immutably, so its parameter hash is checked rather than trusted.
pub fn train_linear_probe(
    encoder: &Encoder,
    dataset: &DatasetHandle,
    cfg: &LinearProbeConfig,
) -> Result<(LinearProbe, ProbeReport)> {
    let hash_before = encoder.param_hash();
    let (train_x, train_y) = labeled_features(encoder, dataset, Split::Train)?;
    let probe = fit_probe(&train_x, &train_y, dataset.num_classes(), cfg);

    let (val_x, val_y) = labeled_features(encoder, dataset, eval_split(dataset))?;
    let logits = probe.logits(&val_x);
    let top1 = top_k_accuracy(&logits, &val_y, 1);
    let top5 = top_k_accuracy(&logits, &val_y, 5.min(dataset.num_classes()));

    let hash_after = encoder.param_hash();
    assert_eq!(hash_before, hash_after, "probe must not touch the backbone");
    Ok((
        probe,
        ProbeReport {
            top1,
            top5,
            encoder_hash: hash_after,
        },
    ))
}

/// Top-1 accuracy of a frozen encoder + trained probe on a shifted dataset
/// sharing the probe's label space.
pub fn evaluate_shifted(
    encoder: &Encoder,
    probe: &LinearProbe,
    shifted: &DatasetHandle,
) -> Result<f64> {
    let split = eval_split(shifted);
    let (x, y) = labeled_features(encoder, shifted, split)?;
    let out_of_space: Vec<usize> = y.iter().copied().filter(|&l| l >= probe.classes).collect();
    if y.iter().all(|&l| l >= probe.classes) {
        return Err(Error::LabelSpaceMismatch {
            probe_classes: probe.classes,
            shifted: out_of_space,
        });
    }
    let logits = probe.logits(&x);
    Ok(top_k_accuracy(&logits, &y, 1))
}

// ── Group invariance metrics ────────────────────────────────────────────────

/// Per-group values and their mean over groups.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupStats {
    pub per_group: BTreeMap<String, f64>,
    pub overall: f64,
}

/// Mean pairwise cosine similarity within each group of representations.
///
/// Uses the normalized-sum identity `(|sum r_hat|^2 - n) / (n(n-1))`, which
/// equals the average over all unordered pairs.
pub fn avg_pairwise_cosine(
    reps: &EmbeddingMatrix,
    groups: &BTreeMap<String, Vec<usize>>,
) -> Result<GroupStats> {
    let normalized = crate::nn::l2_normalize_rows(&reps.values).out;
    let mut per_group = BTreeMap::new();
    for (name, ids) in groups {
        if ids.len() < 2 {
            return Err(Error::SingletonGroup(name.clone()));
        }
        let mut sum = Array1::<f64>::zeros(reps.dim());
        for &id in ids {
            let pos = reps
                .ids
                .iter()
                .position(|&i| i == id)
                .ok_or(Error::UnknownId(id))?;
            sum += &normalized.row(pos);
        }
        let n = ids.len() as f64;
        let value = (sum.dot(&sum) - n) / (n * (n - 1.0));
        per_group.insert(name.clone(), value);
    }
    let overall = per_group.values().sum::<f64>() / per_group.len() as f64;
    Ok(GroupStats { per_group, overall })
}

fn sample_covariance(values: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = values.nrows() as f64;
    let d = values.ncols();
    let mean = values.sum_axis(ndarray::Axis(0)) / n;
    let mut cov = Array2::zeros((d, d));
    for row in values.outer_iter() {
        let centered = &row - &mean;
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    cov /= n - 1.0;
    (mean, cov)
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Inverse of a symmetric positive-definite matrix via eigendecomposition.
fn sym_inverse(m: &Array2<f64>) -> Result<Array2<f64>> {
    let eig = SymmetricEigen::new(to_dmatrix(m));
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = 1e-12 * max_eig.max(1e-300);
    if eig.eigenvalues.iter().any(|&l| l <= floor) {
        return Err(Error::SingularCovariance);
    }
    let d = m.nrows();
    let mut inv = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += eig.eigenvectors[(i, k)] * eig.eigenvectors[(j, k)] / eig.eigenvalues[k];
            }
            inv[(i, j)] = acc;
        }
    }
    Ok(inv)
}

/// Mahalanobis distance to the group mean given an explicit precision
/// matrix: the metric core shared by [`mahalanobis_invariance`].
pub fn group_mahalanobis(
    reps: &EmbeddingMatrix,
    groups: &BTreeMap<String, Vec<usize>>,
    precision: &Array2<f64>,
) -> Result<GroupStats> {
    let mut per_group = BTreeMap::new();
    for (name, ids) in groups {
        if ids.len() < 2 {
            return Err(Error::SingletonGroup(name.clone()));
        }
        let positions: Vec<usize> = ids
            .iter()
            .map(|&id| {
                reps.ids
                    .iter()
                    .position(|&i| i == id)
                    .ok_or(Error::UnknownId(id))
            })
            .collect::<Result<_>>()?;
        let mut mean = Array1::<f64>::zeros(reps.dim());
        for &pos in &positions {
            mean += &reps.values.row(pos);
        }
        mean /= positions.len() as f64;
        let mut total = 0.0;
        for &pos in &positions {
            let diff = &reps.values.row(pos) - &mean;
            let quad = diff.dot(&precision.dot(&diff));
            total += quad.max(0.0).sqrt();
        }
        per_group.insert(name.clone(), total / positions.len() as f64);
    }
    let overall = per_group.values().sum::<f64>() / per_group.len() as f64;
    Ok(GroupStats { per_group, overall })
}

/// Regularizer scale for the covariance: `lambda = scale * trace / d`.
pub const MAHALANOBIS_LAMBDA_SCALE: f64 = 1e-6;

/// Mahalanobis invariance: distance of each member to its group mean under
/// the covariance of all representations, regularized by
/// `lambda = lambda_scale * trace(cov) / d`. `lambda_scale = 0` disables
/// regularization (exact linear-map invariance, at the cost of requiring a
/// well-conditioned covariance).
pub fn mahalanobis_invariance_with(
    reps: &EmbeddingMatrix,
    groups: &BTreeMap<String, Vec<usize>>,
    lambda_scale: f64,
) -> Result<GroupStats> {
    let (_, mut cov) = sample_covariance(&reps.values);
    let d = cov.nrows();
    if lambda_scale > 0.0 {
        let trace: f64 = (0..d).map(|i| cov[(i, i)]).sum();
        let lambda = lambda_scale * trace / d as f64;
        for i in 0..d {
            cov[(i, i)] += lambda;
        }
    }
    let precision = sym_inverse(&cov)?;
    group_mahalanobis(reps, groups, &precision)
}

pub fn mahalanobis_invariance(
    reps: &EmbeddingMatrix,
    groups: &BTreeMap<String, Vec<usize>>,
) -> Result<GroupStats> {
    mahalanobis_invariance_with(reps, groups, MAHALANOBIS_LAMBDA_SCALE)
}

// ── Fréchet distance ────────────────────────────────────────────────────────

/// Fréchet distance between the Gaussian moment matches of two feature sets:
/// `|mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2})`. The matrix square root
/// is taken through the symmetrized product `Sa^{1/2} Sb Sa^{1/2}`; small
/// negative eigenvalue noise is clamped to zero.
pub fn frechet_distance(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            what: "feature sets".into(),
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::EmptyBatch);
    }
    let (mu_a, cov_a) = sample_covariance(&a.values);
    let (mu_b, cov_b) = sample_covariance(&b.values);
    let d = cov_a.nrows();

    // Sa^{1/2} via eigendecomposition
    let eig_a = SymmetricEigen::new(to_dmatrix(&cov_a));
    let mut sqrt_a = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                let lam = eig_a.eigenvalues[k].max(0.0);
                acc += eig_a.eigenvectors[(i, k)] * eig_a.eigenvectors[(j, k)] * lam.sqrt();
            }
            sqrt_a[(i, j)] = acc;
        }
    }
    let m = &sqrt_a * to_dmatrix(&cov_b) * &sqrt_a;
    // symmetrize away round-off before the final eigendecomposition
    let m = (&m + m.transpose()) * 0.5;
    let eig_m = SymmetricEigen::new(m);
    let trace_sqrt: f64 = eig_m
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();

    let diff = &mu_a - &mu_b;
    let trace_a: f64 = (0..d).map(|i| cov_a[(i, i)]).sum();
    let trace_b: f64 = (0..d).map(|i| cov_b[(i, i)]).sum();
    Ok(diff.dot(&diff) + trace_a + trace_b - 2.0 * trace_sqrt)
}

// ── Invariance report ───────────────────────────────────────────────────────

/// Both invariance metrics over a dataset's ground-truth orbits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub cosine: GroupStats,
    pub mahalanobis: GroupStats,
    pub group_sizes: BTreeMap<String, usize>,
    pub encoder_hash: String,
}

/// Embed `split` and measure invariance over its orbits (groups with fewer
/// than two members are skipped).
pub fn invariance_report(
    encoder: &Encoder,
    dataset: &DatasetHandle,
    split: Split,
) -> Result<InvarianceReport> {
    let records: Vec<_> = dataset.iter_split(split).collect();
    if records.is_empty() {
        return Err(Error::Unlabeled(split.to_string()));
    }
    let emb = embed_batch(encoder, &records)?;
    let groups: BTreeMap<String, Vec<usize>> = dataset
        .orbit_members_in(split)
        .into_iter()
        .filter(|(_, members)| members.len() >= 2)
        .map(|(orbit, members)| (format!("orbit-{orbit}"), members))
        .collect();
    if groups.is_empty() {
        return Err(Error::SingletonGroup("<no orbit with 2+ members>".into()));
    }
    let cosine = avg_pairwise_cosine(&emb, &groups)?;
    let mahalanobis = mahalanobis_invariance(&emb, &groups)?;
    Ok(InvarianceReport {
        cosine,
        mahalanobis,
        group_sizes: groups.into_iter().map(|(k, v)| (k, v.len())).collect(),
        encoder_hash: encoder.param_hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic_manifold, NuisanceFactor};
    use ndarray::arr2;
    use rand::Rng;

    fn emb(values: Array2<f64>) -> EmbeddingMatrix {
        let n = values.nrows();
        EmbeddingMatrix::new(values, (0..n).collect(), false)
    }

    fn single_group(n: usize) -> BTreeMap<String, Vec<usize>> {
        let mut g = BTreeMap::new();
        g.insert("g".to_string(), (0..n).collect());
        g
    }

    #[test]
    fn probe_separates_a_separable_toy_set() {
        // two linearly separable blobs in 4-d
        let mut rng = RngStream::new("blobs", 0);
        let n = 60;
        let mut x = Array2::zeros((n, 4));
        let mut y = Vec::new();
        for i in 0..n {
            let class = i % 2;
            let center = if class == 0 { 2.0 } else { -2.0 };
            for j in 0..4 {
                x[(i, j)] = center + rng.random_range(-0.5..0.5);
            }
            y.push(class);
        }
        let cfg = LinearProbeConfig {
            epochs: 20,
            batch_size: 16,
            ..LinearProbeConfig::desk_defaults()
        };
        let probe = fit_probe(&x, &y, 2, &cfg);
        let logits = probe.logits(&x);
        assert_eq!(top_k_accuracy(&logits, &y, 1), 100.0);
    }

    #[test]
    fn probe_freezes_backbone_and_orders_topk() {
        let ds = make_synthetic_manifold(4, 24, &[NuisanceFactor::Rotation], 12, 2)
            .unwrap()
            .with_holdout(0.25, 0)
            .unwrap();
        let encoder = Encoder::oracle_linear(12, 32, 7, true);
        let hash_before = encoder.param_hash();
        let (_, report) =
            train_linear_probe(&encoder, &ds, &LinearProbeConfig::desk_defaults()).unwrap();
        assert_eq!(encoder.param_hash(), hash_before);
        assert!(report.top1 <= report.top5);
        assert_eq!(report.encoder_hash, hash_before);
    }

    #[test]
    fn unlabeled_dataset_rejected() {
        let ds = make_synthetic_manifold(2, 6, &[], 8, 0).unwrap();
        // strip labels by rebuilding records
        let records: Vec<_> = ds
            .records()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.label = None;
                r
            })
            .collect();
        let ds = DatasetHandle::from_records("unlabeled", 8, 2, records).unwrap();
        let encoder = Encoder::oracle_linear(8, 16, 0, true);
        assert!(matches!(
            train_linear_probe(&encoder, &ds, &LinearProbeConfig::desk_defaults()),
            Err(Error::Unlabeled(_))
        ));
    }

    use crate::dataset::DatasetHandle;

    #[test]
    fn cosine_identical_and_orthogonal_groups() {
        let same = emb(arr2(&[[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]));
        let stats = avg_pairwise_cosine(&same, &single_group(3)).unwrap();
        assert!((stats.overall - 1.0).abs() < 1e-12);

        let ortho = emb(arr2(&[[1.0, 0.0], [0.0, 1.0]]));
        let stats = avg_pairwise_cosine(&ortho, &single_group(2)).unwrap();
        assert!(stats.overall.abs() < 1e-12);
    }

    #[test]
    fn cosine_matches_double_loop_oracle() {
        let mut rng = RngStream::new("cos-oracle", 0);
        let values = Array2::from_shape_fn((5, 8), |_| rng.random_range(-1.0..1.0));
        let stats = avg_pairwise_cosine(&emb(values.clone()), &single_group(5)).unwrap();
        // brute force over unordered pairs
        let mut total = 0.0;
        let mut pairs = 0usize;
        for a in 0..5 {
            for b in (a + 1)..5 {
                let ra = values.row(a);
                let rb = values.row(b);
                let dot: f64 = ra.iter().zip(rb.iter()).map(|(x, y)| x * y).sum();
                let na: f64 = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb: f64 = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
                total += dot / (na * nb);
                pairs += 1;
            }
        }
        assert!((stats.overall - total / pairs as f64).abs() < 1e-9);
    }

    #[test]
    fn cosine_invariant_to_positive_rescaling() {
        let mut rng = RngStream::new("cos-scale", 0);
        let values = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let a = avg_pairwise_cosine(&emb(values.clone()), &single_group(6)).unwrap();
        let b = avg_pairwise_cosine(&emb(values * 37.5), &single_group(6)).unwrap();
        assert!((a.overall - b.overall).abs() < 1e-12);
    }

    #[test]
    fn singleton_group_rejected() {
        let values = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let mut groups = BTreeMap::new();
        groups.insert("lonely".to_string(), vec![0]);
        assert!(matches!(
            avg_pairwise_cosine(&emb(values), &groups),
            Err(Error::SingletonGroup(_))
        ));
    }

    #[test]
    fn mahalanobis_identical_members_is_zero() {
        // identical group members; other rows keep the covariance regular
        let mut rng = RngStream::new("mah-zero", 0);
        let mut values = Array2::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0));
        for i in 0..3 {
            let row = values.row(9).to_owned();
            values.row_mut(i).assign(&row);
        }
        let mut groups = BTreeMap::new();
        groups.insert("same".to_string(), vec![0, 1, 2]);
        let stats = mahalanobis_invariance(&emb(values), &groups).unwrap();
        assert!(stats.overall.abs() < 1e-9);
    }

    #[test]
    fn identity_precision_reduces_to_euclidean() {
        let values = arr2(&[[1.0, 0.0], [3.0, 0.0], [2.0, 4.0]]);
        let stats = group_mahalanobis(
            &emb(values.clone()),
            &single_group(3),
            &Array2::eye(2),
        )
        .unwrap();
        // group mean is (2, 4/3); mean Euclidean distance to it
        let mean = [2.0, 4.0 / 3.0];
        let mut total = 0.0;
        for i in 0..3 {
            let dx: f64 = values[(i, 0)] - mean[0];
            let dy: f64 = values[(i, 1)] - mean[1];
            total += (dx * dx + dy * dy).sqrt();
        }
        assert!((stats.overall - total / 3.0).abs() < 1e-12);
    }

    /// Gauss-Jordan inverse, independent of the eigendecomposition route.
    fn gauss_jordan_inverse(m: &Array2<f64>) -> Array2<f64> {
        let d = m.nrows();
        let mut a = m.clone();
        let mut inv = Array2::eye(d);
        for col in 0..d {
            let pivot = a[(col, col)];
            for j in 0..d {
                a[(col, j)] /= pivot;
                inv[(col, j)] /= pivot;
            }
            for row in 0..d {
                if row != col {
                    let factor = a[(row, col)];
                    for j in 0..d {
                        a[(row, j)] -= factor * a[(col, j)];
                        inv[(row, j)] -= factor * inv[(col, j)];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn mahalanobis_matches_hand_computed_quadratic_form() {
        // 3 points in 2-d; the whole set is the single group
        let values = arr2(&[[0.0, 0.0], [1.0, 0.5], [2.0, 2.0]]);
        let stats = mahalanobis_invariance(&emb(values.clone()), &single_group(3)).unwrap();

        // independent computation: covariance, regularizer, GJ inverse, loop
        let n = 3.0;
        let mean = [1.0, 2.5 / 3.0];
        let mut cov = Array2::zeros((2, 2));
        for i in 0..3 {
            let dx = values[(i, 0)] - mean[0];
            let dy = values[(i, 1)] - mean[1];
            cov[(0, 0)] += dx * dx;
            cov[(0, 1)] += dx * dy;
            cov[(1, 0)] += dy * dx;
            cov[(1, 1)] += dy * dy;
        }
        cov /= n - 1.0;
        let lambda = MAHALANOBIS_LAMBDA_SCALE * (cov[(0, 0)] + cov[(1, 1)]) / 2.0;
        cov[(0, 0)] += lambda;
        cov[(1, 1)] += lambda;
        let prec = gauss_jordan_inverse(&cov);
        let mut total = 0.0;
        for i in 0..3 {
            let d = [values[(i, 0)] - mean[0], values[(i, 1)] - mean[1]];
            let quad = d[0] * (prec[(0, 0)] * d[0] + prec[(0, 1)] * d[1])
                + d[1] * (prec[(1, 0)] * d[0] + prec[(1, 1)] * d[1]);
            total += quad.sqrt();
        }
        assert!((stats.overall - total / 3.0).abs() < 1e-9);
    }

    #[test]
    fn mahalanobis_invariant_to_invertible_linear_maps() {
        let mut rng = RngStream::new("mah-map", 0);
        let values = Array2::from_shape_fn((40, 3), |_| rng.random_range(-1.0..1.0));
        let mut groups = BTreeMap::new();
        groups.insert("a".to_string(), (0..20).collect::<Vec<_>>());
        groups.insert("b".to_string(), (20..40).collect::<Vec<_>>());
        let base = mahalanobis_invariance_with(&emb(values.clone()), &groups, 0.0).unwrap();

        let map = arr2(&[[2.0, 0.3, -0.5], [0.0, 1.5, 0.7], [0.1, -0.2, 0.8]]);
        let mapped = values.dot(&map);
        let transformed = mahalanobis_invariance_with(&emb(mapped), &groups, 0.0).unwrap();
        assert!(
            (base.overall - transformed.overall).abs() < 1e-6,
            "{} vs {}",
            base.overall,
            transformed.overall
        );
    }

    #[test]
    fn frechet_identical_sets_and_one_dimensional_closed_form() {
        let mut rng = RngStream::new("fid", 0);
        let values = Array2::from_shape_fn((50, 4), |_| rng.random_range(-1.0..1.0));
        let a = emb(values.clone());
        let d = frechet_distance(&a, &a).unwrap();
        assert!(d.abs() < 1e-6, "self distance {d}");

        // 1-d: (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2
        let xs = emb(arr2(&[[0.0], [1.0], [2.0], [3.0]]));
        let ys = emb(arr2(&[[1.0], [2.0], [3.0], [8.0]]));
        let got = frechet_distance(&xs, &ys).unwrap();
        let (mu_a, var_a): (f64, f64) = (1.5, 5.0 / 3.0);
        let mean_b: f64 = (1.0 + 2.0 + 3.0 + 8.0) / 4.0;
        let var_b: f64 = [1.0f64, 2.0, 3.0, 8.0]
            .iter()
            .map(|v| (v - mean_b).powi(2))
            .sum::<f64>()
            / 3.0;
        let expected = (mu_a - mean_b) * (mu_a - mean_b)
            + (var_a.sqrt() - var_b.sqrt()) * (var_a.sqrt() - var_b.sqrt());
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn frechet_symmetric_and_checks_dims() {
        let mut rng = RngStream::new("fid-sym", 0);
        let a = emb(Array2::from_shape_fn((30, 3), |_| rng.random_range(-1.0..1.0)));
        let b = emb(Array2::from_shape_fn((25, 3), |_| rng.random_range(0.0..2.0)));
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!(ab > 0.0);

        let c = emb(Array2::from_shape_fn((10, 4), |_| rng.random_range(0.0..1.0)));
        assert!(matches!(
            frechet_distance(&a, &c),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn shifted_evaluation_contract() {
        let ds = make_synthetic_manifold(4, 20, &[NuisanceFactor::Hue], 12, 3)
            .unwrap()
            .with_holdout(0.25, 1)
            .unwrap();
        let encoder = Encoder::oracle_linear(12, 48, 2, true);
        let (probe, report) =
            train_linear_probe(&encoder, &ds, &LinearProbeConfig::desk_defaults()).unwrap();

        // shifted set equal to the original val set: identical accuracy
        let top1 = evaluate_shifted(&encoder, &probe, &ds).unwrap();
        assert_eq!(top1, report.top1);

        // disjoint label space rejected
        let records: Vec<_> = ds
            .records()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.label = r.label.map(|l| l + 100);
                r
            })
            .collect();
        let shifted = DatasetHandle::from_records("shifted", 12, 104, records).unwrap();
        assert!(matches!(
            evaluate_shifted(&encoder, &probe, &shifted),
            Err(Error::LabelSpaceMismatch { .. })
        ));
    }

    #[test]
    fn invariance_report_over_orbits() {
        let ds = make_synthetic_manifold(3, 10, &[NuisanceFactor::Rotation], 12, 8).unwrap();
        let encoder = Encoder::oracle_linear(12, 24, 4, true);
        let report = invariance_report(&encoder, &ds, Split::Train).unwrap();
        assert_eq!(report.group_sizes.len(), 3);
        assert!(report.cosine.overall <= 1.0 && report.cosine.overall >= -1.0);
        assert!(report.mahalanobis.overall >= 0.0);
    }
}
