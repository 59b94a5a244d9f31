//! Desk-scale SimSiam and MoCo-style pretraining over view pairs.
//!
//! The training loop follows one recipe: sample a mini-batch, build two views
//! per instance (manifold sampling with probability alpha, then the
//! handcrafted pipeline), and update the extractor with the chosen siamese
//! objective under SGD with momentum and cosine learning-rate decay. The
//! effective learning rate is `base_lr * batch_size / 256`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{make_view_pair, HcaConfig, LmaMode, LmaPolicy, ViewPair};
use crate::dataset::{epoch_permutation, DatasetHandle, Split};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::image_ops::Image;
use crate::nn::net::MlpHead;
use crate::nn::{l2_normalize_rows, sgd_step, softmax_cross_entropy, zero_grads, Param, SgdConfig};
use crate::rng::RngStream;

// ── Configuration ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SslMethod {
    Simsiam,
    Mocov2,
}

/// Trainer hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: SslMethod,
    pub base_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub sgd_momentum: f64,
    /// Momentum-encoder coefficient (mocov2).
    pub moco_momentum: f64,
    /// InfoNCE temperature (mocov2).
    pub temperature: f64,
    /// Key queue capacity (mocov2).
    pub queue_size: usize,
    pub seed: u64,
    pub backbone_channels: (usize, usize, usize),
    /// Backbone representation width `d`.
    pub representation_dim: usize,
    pub projector_hidden: usize,
    pub projector_dim: usize,
    pub predictor_hidden: usize,
}

impl TrainConfig {
    pub fn desk_defaults(method: SslMethod) -> Self {
        TrainConfig {
            method,
            base_lr: 0.03,
            batch_size: 64,
            epochs: 20,
            weight_decay: 5e-4,
            sgd_momentum: 0.9,
            moco_momentum: 0.999,
            temperature: 0.2,
            queue_size: 4096,
            seed: 0,
            backbone_channels: (16, 32, 64),
            representation_dim: 128,
            projector_hidden: 128,
            projector_dim: 128,
            predictor_hidden: 32,
        }
    }

    pub fn effective_lr(&self) -> f64 {
        scaled_lr(self.base_lr, self.batch_size)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.base_lr <= 0.0 {
            issues.push(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.batch_size < 2 {
            issues.push("batch_size must be >= 2 (batch statistics)".into());
        }
        if !(0.0..=1.0).contains(&self.moco_momentum) {
            issues.push(format!(
                "moco_momentum must be in [0, 1], got {}",
                self.moco_momentum
            ));
        }
        if self.temperature <= 0.0 {
            issues.push(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.method == SslMethod::Mocov2 && self.queue_size == 0 {
            issues.push("queue_size must be >= 1 for mocov2".into());
        }
        issues
    }
}

/// Linear learning-rate scaling: `base_lr * batch_size / 256`.
pub fn scaled_lr(base_lr: f64, batch_size: usize) -> f64 {
    base_lr * batch_size as f64 / 256.0
}

/// Cosine decay: `effective_lr * 0.5 * (1 + cos(pi * step / total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, effective_lr: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::StepOutOfRange { step, total_steps });
    }
    Ok(effective_lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos()))
}

// ── Model ───────────────────────────────────────────────────────────────────

/// FIFO ring buffer of unit-norm key vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyQueue {
    pub keys: Array2<f64>, // [K, dim]
    cursor: usize,
    filled: usize,
}

impl KeyQueue {
    pub fn new(capacity: usize, dim: usize) -> Self {
        KeyQueue {
            keys: Array2::zeros((capacity, dim)),
            cursor: 0,
            filled: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.keys.nrows()
    }

    /// Zero-init keys participate in the loss until the first wrap; this
    /// flag marks when every slot has been written.
    pub fn is_warm(&self) -> bool {
        self.filled >= self.capacity()
    }

    pub fn enqueue(&mut self, batch: &Array2<f64>) {
        for row in batch.outer_iter() {
            self.keys.row_mut(self.cursor).assign(&row);
            self.cursor = (self.cursor + 1) % self.capacity();
            self.filled = (self.filled + 1).min(self.capacity());
        }
    }

    /// Most recent `n` keys, oldest first.
    pub fn recent(&self, n: usize) -> Vec<Array1<f64>> {
        let n = n.min(self.filled);
        let cap = self.capacity();
        (0..n)
            .map(|i| {
                let pos = (self.cursor + cap - n + i) % cap;
                self.keys.row(pos).to_owned()
            })
            .collect()
    }
}

/// Siamese extractor: backbone + projector, with a predictor head (simsiam)
/// or a momentum key encoder and queue (mocov2).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiameseModel {
    pub backbone: Encoder,
    pub projector: MlpHead,
    pub predictor: Option<MlpHead>,
    pub key_backbone: Option<Encoder>,
    pub key_projector: Option<MlpHead>,
    pub queue: Option<KeyQueue>,
}

impl SiameseModel {
    pub fn new(cfg: &TrainConfig, resolution: usize, rng: &mut RngStream) -> Self {
        let backbone = Encoder::tiny_conv(
            resolution,
            cfg.backbone_channels,
            cfg.representation_dim,
            false,
            &mut rng.substream("backbone"),
        );
        let projector = MlpHead::new(
            cfg.representation_dim,
            cfg.projector_hidden,
            cfg.projector_dim,
            true,
            &mut rng.substream("projector"),
        );
        match cfg.method {
            SslMethod::Simsiam => SiameseModel {
                backbone,
                projector,
                predictor: Some(MlpHead::new(
                    cfg.projector_dim,
                    cfg.predictor_hidden,
                    cfg.projector_dim,
                    false,
                    &mut rng.substream("predictor"),
                )),
                key_backbone: None,
                key_projector: None,
                queue: None,
            },
            SslMethod::Mocov2 => {
                let key_backbone = backbone.clone();
                let key_projector = projector.clone();
                SiameseModel {
                    backbone,
                    projector,
                    predictor: None,
                    key_backbone: Some(key_backbone),
                    key_projector: Some(key_projector),
                    queue: Some(KeyQueue::new(cfg.queue_size, cfg.projector_dim)),
                }
            }
        }
    }

    /// Parameters touched by the gradient optimizer. Key-encoder parameters
    /// are deliberately absent: they move only through the momentum update.
    pub fn trainable_params(&mut self) -> Vec<&mut Param> {
        let mut params = self.backbone.params_mut();
        params.extend(self.projector.params_mut());
        if let Some(pred) = &mut self.predictor {
            params.extend(pred.params_mut());
        }
        params
    }
}

// ── SimSiam objective ───────────────────────────────────────────────────────

/// Symmetric negative cosine with stop-gradient targets.
///
/// Returns the mean loss, the gradients flowing into the predictor outputs,
/// and the gradients assigned to the target projections — the latter are
/// identically zero (that is the stop-gradient), and the step adds them into
/// the projector backward so the contract is exercised, not assumed.
pub struct SimsiamGrads {
    pub loss: f64,
    pub d_p1: Array2<f64>,
    pub d_p2: Array2<f64>,
    pub d_z1_target: Array2<f64>,
    pub d_z2_target: Array2<f64>,
}

/// Gradient of `cos(p, z)` with respect to `p`, `z` held constant.
fn cosine_grad_p(p: ndarray::ArrayView1<f64>, z: ndarray::ArrayView1<f64>) -> (f64, Array1<f64>) {
    let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let dot: f64 = p.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
    let c = dot / (pn * zn);
    let mut grad = Array1::zeros(p.len());
    for i in 0..p.len() {
        grad[i] = z[i] / (pn * zn) - c * p[i] / (pn * pn);
    }
    (c, grad)
}

pub fn simsiam_loss(
    p1: &Array2<f64>,
    z2: &Array2<f64>,
    p2: &Array2<f64>,
    z1: &Array2<f64>,
) -> SimsiamGrads {
    let n = p1.nrows();
    let scale = -0.5 / n as f64;
    let mut loss = 0.0;
    let mut d_p1 = Array2::zeros(p1.raw_dim());
    let mut d_p2 = Array2::zeros(p2.raw_dim());
    for i in 0..n {
        let (c1, g1) = cosine_grad_p(p1.row(i), z2.row(i));
        let (c2, g2) = cosine_grad_p(p2.row(i), z1.row(i));
        loss += -0.5 * (c1 + c2);
        d_p1.row_mut(i).assign(&(g1 * scale));
        d_p2.row_mut(i).assign(&(g2 * scale));
    }
    SimsiamGrads {
        loss: loss / n as f64,
        d_p1,
        d_p2,
        // stop-gradient: the target projections receive exactly zero
        d_z1_target: Array2::zeros(z1.raw_dim()),
        d_z2_target: Array2::zeros(z2.raw_dim()),
    }
}

/// One SimSiam update over a batch of view pairs. Returns the loss, which
/// lies in [-1, 1].
pub fn simsiam_step(
    model: &mut SiameseModel,
    pairs: &[ViewPair],
    lr: f64,
    opt: SgdConfig,
) -> Result<f64> {
    if model.predictor.is_none() {
        return Err(Error::MissingHead("predictor"));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let v1: Vec<&Image> = pairs.iter().map(|p| &p.view1).collect();
    let v2: Vec<&Image> = pairs.iter().map(|p| &p.view2).collect();

    zero_grads(model.trainable_params());

    let (b1, cache_b1) = model.backbone.forward_train(&v1)?;
    let (z1, cache_z1) = model.projector.forward_train(&b1);
    let (b2, cache_b2) = model.backbone.forward_train(&v2)?;
    let (z2, cache_z2) = model.projector.forward_train(&b2);
    let predictor = model.predictor.as_mut().expect("checked above");
    let (p1, cache_p1) = predictor.forward_train(&z1);
    let (p2, cache_p2) = predictor.forward_train(&z2);

    let grads = simsiam_loss(&p1, &z2, &p2, &z1);

    // branch 1: predictor path plus the (zero) target-path contribution
    let mut d_z1 = predictor.backward(&cache_p1, &grads.d_p1);
    d_z1 += &grads.d_z1_target;
    let d_b1 = model.projector.backward(&cache_z1, &d_z1);
    model.backbone.backward(&cache_b1, &d_b1);

    // branch 2
    let mut d_z2 = predictor.backward(&cache_p2, &grads.d_p2);
    d_z2 += &grads.d_z2_target;
    let d_b2 = model.projector.backward(&cache_z2, &d_z2);
    model.backbone.backward(&cache_b2, &d_b2);

    sgd_step(model.trainable_params(), lr, opt);
    Ok(grads.loss)
}

// ── MoCo objective ──────────────────────────────────────────────────────────

/// InfoNCE over the positive key and the queue:
/// `-log( exp(q.k+/t) / (exp(q.k+/t) + sum_j exp(q.k_j/t)) )`, averaged over
/// the batch. Returns the loss and its gradient with respect to `q`.
pub fn infonce_loss(
    q: &Array2<f64>,
    k_pos: &Array2<f64>,
    queue: &Array2<f64>,
    temperature: f64,
) -> (f64, Array2<f64>) {
    let n = q.nrows();
    let k_queue = queue.nrows();
    let mut logits = Array2::zeros((n, 1 + k_queue));
    for i in 0..n {
        let qi = q.row(i);
        logits[(i, 0)] = qi.dot(&k_pos.row(i)) / temperature;
        for j in 0..k_queue {
            logits[(i, 1 + j)] = qi.dot(&queue.row(j)) / temperature;
        }
    }
    let targets = vec![0usize; n];
    let (loss, dlogits) = softmax_cross_entropy(&logits, &targets);
    let mut dq = Array2::zeros(q.raw_dim());
    for i in 0..n {
        let mut row = Array1::zeros(q.ncols());
        row.scaled_add(dlogits[(i, 0)] / temperature, &k_pos.row(i));
        for j in 0..k_queue {
            row.scaled_add(dlogits[(i, 1 + j)] / temperature, &queue.row(j));
        }
        dq.row_mut(i).assign(&row);
    }
    (loss, dq)
}

/// One MoCo update: query gradient step, then the momentum update
/// `key <- m*key + (1-m)*query` (with the post-step query), then the key
/// batch is enqueued FIFO.
pub fn mocov2_step(
    model: &mut SiameseModel,
    pairs: &[ViewPair],
    lr: f64,
    opt: SgdConfig,
    moco_momentum: f64,
    temperature: f64,
) -> Result<f64> {
    if model.key_backbone.is_none() || model.key_projector.is_none() {
        return Err(Error::MissingHead("key encoder"));
    }
    if model.queue.is_none() {
        return Err(Error::MissingHead("queue"));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let v1: Vec<&Image> = pairs.iter().map(|p| &p.view1).collect();
    let v2: Vec<&Image> = pairs.iter().map(|p| &p.view2).collect();

    zero_grads(model.trainable_params());

    // query path (with gradient)
    let (b_q, cache_bq) = model.backbone.forward_train(&v1)?;
    let (z_q, cache_zq) = model.projector.forward_train(&b_q);
    let q_norm = l2_normalize_rows(&z_q);

    // key path (no gradient: nothing is ever backpropagated here)
    let key_backbone = model.key_backbone.as_mut().expect("checked above");
    let key_projector = model.key_projector.as_mut().expect("checked above");
    let (b_k, _) = key_backbone.forward_train(&v2)?;
    let (z_k, _) = key_projector.forward_train(&b_k);
    let k_norm = l2_normalize_rows(&z_k);

    let queue = model.queue.as_ref().expect("checked above");
    let (loss, dq) = infonce_loss(&q_norm.out, &k_norm.out, &queue.keys, temperature);

    let d_zq = q_norm.backward(&dq);
    let d_bq = model.projector.backward(&cache_zq, &d_zq);
    model.backbone.backward(&cache_bq, &d_bq);

    sgd_step(model.trainable_params(), lr, opt);

    // momentum update with the post-step query parameters
    let query_values: Vec<ndarray::ArrayD<f64>> = {
        let mut vals: Vec<_> = model
            .backbone
            .params()
            .iter()
            .map(|p| p.value.clone())
            .collect();
        vals.extend(model.projector.params().iter().map(|p| p.value.clone()));
        vals
    };
    {
        let key_backbone = model.key_backbone.as_mut().expect("checked above");
        let key_projector = model.key_projector.as_mut().expect("checked above");
        let mut key_params = key_backbone.params_mut();
        key_params.extend(key_projector.params_mut());
        assert_eq!(key_params.len(), query_values.len());
        for (kp, qv) in key_params.into_iter().zip(query_values.iter()) {
            kp.value.zip_mut_with(qv, |k, &q| {
                *k = moco_momentum * *k + (1.0 - moco_momentum) * q;
            });
        }
    }

    model
        .queue
        .as_mut()
        .expect("checked above")
        .enqueue(&k_norm.out);
    Ok(loss)
}

// ── Pretraining loop ────────────────────────────────────────────────────────

/// One line of the metric log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub alpha: f64,
    pub mode: LmaMode,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub verbose: bool,
    /// Where to write per-epoch checkpoints (none when absent).
    pub checkpoint_dir: Option<PathBuf>,
    /// Embedded in every checkpoint for artifact bookkeeping.
    pub config_hash: Option<String>,
}

pub struct TrainOutcome {
    pub model: SiameseModel,
    pub metrics: Vec<MetricRecord>,
}

const MODEL_SCHEMA: &str = "lma-model-v1";

#[derive(Serialize, Deserialize)]
struct ModelCheckpoint {
    schema: String,
    epoch: usize,
    seed: u64,
    config_hash: Option<String>,
    train_config: TrainConfig,
    model: SiameseModel,
}

pub fn save_model_checkpoint(
    model: &SiameseModel,
    cfg: &TrainConfig,
    epoch: usize,
    config_hash: Option<&str>,
    path: &Path,
) -> Result<()> {
    let ckpt = ModelCheckpoint {
        schema: MODEL_SCHEMA.into(),
        epoch,
        seed: cfg.seed,
        config_hash: config_hash.map(str::to_owned),
        train_config: cfg.clone(),
        model: model.clone(),
    };
    std::fs::write(path, serde_json::to_string(&ckpt)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model_checkpoint(path: &Path) -> Result<(SiameseModel, TrainConfig, usize)> {
    let raw =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let ckpt: ModelCheckpoint = serde_json::from_str(&raw).map_err(|e| Error::Checkpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if ckpt.schema != MODEL_SCHEMA {
        return Err(Error::Checkpoint {
            path: path.display().to_string(),
            detail: format!("unknown schema `{}`", ckpt.schema),
        });
    }
    Ok((ckpt.model, ckpt.train_config, ckpt.epoch))
}

/// Run the full pretraining loop: `epochs` passes over the train split in a
/// per-epoch shuffled order, two views per instance, one optimizer step per
/// batch (trailing partial batches are dropped so batch statistics stay
/// well-defined). A non-finite loss aborts with a diagnostic snapshot.
pub fn pretrain(
    dataset: &Arc<DatasetHandle>,
    policy: &LmaPolicy,
    hca: &HcaConfig,
    cfg: &TrainConfig,
    embedder: Option<&Encoder>,
    opts: &RunOptions,
) -> Result<TrainOutcome> {
    let issues: Vec<String> = cfg
        .validate()
        .into_iter()
        .chain(policy.validate())
        .chain(hca.validate())
        .collect();
    if !issues.is_empty() {
        return Err(Error::InvalidConfig(issues));
    }

    let mut init_rng = RngStream::new("model-init", cfg.seed);
    let mut model = SiameseModel::new(cfg, hca.output_scale, &mut init_rng);
    let mut metrics = Vec::new();

    let train_ids = dataset.split_ids(Split::Train);
    let steps_per_epoch = train_ids.len() / cfg.batch_size;
    let total_steps = steps_per_epoch * cfg.epochs;
    if cfg.epochs > 0 && steps_per_epoch == 0 {
        return Err(Error::BatchTooLarge {
            requested: cfg.batch_size,
            available: train_ids.len(),
        });
    }
    let opt = SgdConfig {
        momentum: cfg.sgd_momentum,
        weight_decay: cfg.weight_decay,
    };

    let mut global_step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = epoch_permutation(dataset, Split::Train, cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for batch_ids in order.chunks_exact(cfg.batch_size) {
            let pairs: Vec<ViewPair> = batch_ids
                .par_iter()
                .map(|&id| {
                    let rec = dataset.get(id).expect("id from split listing");
                    let root = RngStream::new(format!("aug/e{epoch}/i{id}"), cfg.seed);
                    make_view_pair(rec, policy, hca, embedder, &root)
                })
                .collect::<Result<_>>()?;

            let lr = cosine_lr(global_step, total_steps, cfg.effective_lr())?;
            let loss = match cfg.method {
                SslMethod::Simsiam => simsiam_step(&mut model, &pairs, lr, opt)?,
                SslMethod::Mocov2 => mocov2_step(
                    &mut model,
                    &pairs,
                    lr,
                    opt,
                    cfg.moco_momentum,
                    cfg.temperature,
                )?,
            };
            if !loss.is_finite() {
                let snapshot = match &opts.checkpoint_dir {
                    Some(dir) => {
                        let path = dir.join("diagnostic_snapshot.json");
                        save_model_checkpoint(
                            &model,
                            cfg,
                            epoch,
                            opts.config_hash.as_deref(),
                            &path,
                        )?;
                        path.display().to_string()
                    }
                    None => "<not persisted: no checkpoint dir>".into(),
                };
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: global_step,
                    snapshot,
                });
            }
            metrics.push(MetricRecord {
                epoch,
                step: global_step,
                loss,
                lr,
                alpha: policy.alpha,
                mode: policy.mode,
            });
            epoch_loss += loss;
            global_step += 1;
        }
        if opts.verbose {
            eprintln!(
                "epoch {epoch:>3}: mean loss {:+.4}",
                epoch_loss / steps_per_epoch as f64
            );
        }
        if let Some(dir) = &opts.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
            let path = dir.join(format!("epoch_{epoch:04}.json"));
            save_model_checkpoint(&model, cfg, epoch, opts.config_hash.as_deref(), &path)?;
        }
    }
    Ok(TrainOutcome { model, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic_manifold, NuisanceFactor};
    use crate::generator::{GeneratorBackend, LatentPrior};
    use ndarray::arr2;

    fn unit_rows(rows: &[[f64; 2]]) -> Array2<f64> {
        let mut m = Array2::zeros((rows.len(), 2));
        for (i, r) in rows.iter().enumerate() {
            let n = (r[0] * r[0] + r[1] * r[1]).sqrt();
            m[(i, 0)] = r[0] / n;
            m[(i, 1)] = r[1] / n;
        }
        m
    }

    #[test]
    fn schedule_arithmetic() {
        assert_eq!(scaled_lr(0.05, 256), 0.05);
        assert_eq!(scaled_lr(0.05, 512), 0.10);
        assert_eq!(scaled_lr(0.03, 128), 0.015);

        let eff = 0.2;
        assert_eq!(cosine_lr(0, 100, eff).unwrap(), eff);
        assert!((cosine_lr(100, 100, eff).unwrap()).abs() < 1e-16);
        assert!((cosine_lr(50, 100, eff).unwrap() - eff / 2.0).abs() < 1e-12);
        assert!(cosine_lr(101, 100, eff).is_err());
    }

    #[test]
    fn simsiam_loss_endpoints() {
        // identical unit vectors on both branches: loss = -1
        let v = unit_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let grads = simsiam_loss(&v, &v, &v, &v);
        assert!((grads.loss - (-1.0)).abs() < 1e-12);

        // orthogonal p and z: loss = 0
        let p = unit_rows(&[[1.0, 0.0]]);
        let z = unit_rows(&[[0.0, 1.0]]);
        let grads = simsiam_loss(&p, &z, &p, &z);
        assert!(grads.loss.abs() < 1e-12);

        // stop-gradient targets carry exactly zero
        assert!(grads.d_z1_target.iter().all(|&g| g == 0.0));
        assert!(grads.d_z2_target.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn infonce_matches_hand_computed_three_key_case() {
        // q = (1,0); k+ = (1,0); queue = (0,1), (-1,0), (sqrt2/2, sqrt2/2)
        let q = arr2(&[[1.0, 0.0]]);
        let k = arr2(&[[1.0, 0.0]]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let queue = arr2(&[[0.0, 1.0], [-1.0, 0.0], [s, s]]);
        let tau = 0.2;
        let (loss, _) = infonce_loss(&q, &k, &queue, tau);
        // hand computation: logits/tau = 5, 0, -5, s/0.2
        let exp_sum = 5.0f64.exp() + 1.0 + (-5.0f64).exp() + (s / 0.2).exp();
        let expected = exp_sum.ln() - 5.0;
        assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
    }

    #[test]
    fn infonce_bounds_hold() {
        let mut rng = RngStream::new("nce", 0);
        use rand::Rng;
        let q = l2_normalize_rows(&Array2::from_shape_fn((4, 8), |_| {
            rng.random_range(-1.0..1.0)
        }))
        .out;
        let k = l2_normalize_rows(&Array2::from_shape_fn((4, 8), |_| {
            rng.random_range(-1.0..1.0)
        }))
        .out;
        let queue = l2_normalize_rows(&Array2::from_shape_fn((16, 8), |_| {
            rng.random_range(-1.0..1.0)
        }))
        .out;
        let tau = 0.2;
        let (loss, _) = infonce_loss(&q, &k, &queue, tau);
        assert!(loss >= 0.0);
        assert!(loss <= (1.0 + 16.0f64).ln() + 2.0 / tau);
    }

    #[test]
    fn queue_is_fifo() {
        let mut queue = KeyQueue::new(4, 2);
        assert!(!queue.is_warm());
        for batch in 0..5 {
            let rows = arr2(&[
                [batch as f64, 0.0],
                [batch as f64, 1.0],
            ]);
            queue.enqueue(&rows);
        }
        assert!(queue.is_warm());
        // 10 keys through capacity 4: the most recent are batches 4 and 3
        let recent = queue.recent(4);
        assert_eq!(recent[0][[0]], 3.0);
        assert_eq!(recent[1][[0]], 3.0);
        assert_eq!(recent[2][[0]], 4.0);
        assert_eq!(recent[3][[0]], 4.0);
        assert_eq!(recent[2][[1]], 0.0);
        assert_eq!(recent[3][[1]], 1.0);
    }

    fn tiny_training_setup(
        method: SslMethod,
    ) -> (
        Arc<DatasetHandle>,
        LmaPolicy,
        HcaConfig,
        TrainConfig,
    ) {
        let ds = Arc::new(
            make_synthetic_manifold(3, 16, &[NuisanceFactor::Rotation], 12, 4).unwrap(),
        );
        let policy = LmaPolicy::new(
            0.3,
            LmaMode::Lma,
            Arc::new(GeneratorBackend::oracle_manifold(ds.clone(), None)),
            LatentPrior::standard_normal(4),
        );
        let hca = HcaConfig::for_resolution(12);
        let mut cfg = TrainConfig::desk_defaults(method);
        cfg.batch_size = 8;
        cfg.epochs = 5;
        cfg.backbone_channels = (4, 8, 16);
        cfg.representation_dim = 16;
        cfg.projector_hidden = 16;
        cfg.projector_dim = 16;
        cfg.predictor_hidden = 8;
        cfg.queue_size = 32;
        cfg.base_lr = 2.0; // effective 0.0625 at batch 8
        (ds, policy, hca, cfg)
    }

    use crate::dataset::DatasetHandle;

    #[test]
    fn zero_epochs_returns_the_initialized_model() {
        let (ds, policy, hca, mut cfg) = tiny_training_setup(SslMethod::Simsiam);
        cfg.epochs = 0;
        let outcome = pretrain(&ds, &policy, &hca, &cfg, None, &RunOptions::default()).unwrap();
        let mut rng = RngStream::new("model-init", cfg.seed);
        let fresh = SiameseModel::new(&cfg, hca.output_scale, &mut rng);
        assert_eq!(
            outcome.model.backbone.param_hash(),
            fresh.backbone.param_hash()
        );
        assert!(outcome.metrics.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_loss_decreases() {
        let (ds, policy, hca, cfg) = tiny_training_setup(SslMethod::Simsiam);
        let a = pretrain(&ds, &policy, &hca, &cfg, None, &RunOptions::default()).unwrap();
        let b = pretrain(&ds, &policy, &hca, &cfg, None, &RunOptions::default()).unwrap();
        let losses_a: Vec<f64> = a.metrics.iter().map(|m| m.loss).collect();
        let losses_b: Vec<f64> = b.metrics.iter().map(|m| m.loss).collect();
        assert_eq!(losses_a, losses_b, "same seed must replay the loss curve");

        let steps = a.metrics.len() / cfg.epochs;
        let first: f64 = losses_a[..steps].iter().sum::<f64>() / steps as f64;
        let last: f64 = losses_a[losses_a.len() - steps..].iter().sum::<f64>() / steps as f64;
        assert!(
            last < first,
            "optimization sanity: last-epoch loss {last:.4} vs first {first:.4}"
        );

        // per-step lr values equal the schedule exactly
        let total = steps * cfg.epochs;
        for m in &a.metrics {
            assert_eq!(m.lr, cosine_lr(m.step, total, cfg.effective_lr()).unwrap());
        }
    }

    #[test]
    fn mocov2_momentum_identities() {
        let (ds, policy, hca, mut cfg) = tiny_training_setup(SslMethod::Mocov2);
        cfg.epochs = 1;

        // m = 1: key parameters unchanged to machine precision
        cfg.moco_momentum = 1.0;
        let mut rng = RngStream::new("model-init", cfg.seed);
        let before = SiameseModel::new(&cfg, hca.output_scale, &mut rng);
        let before_hash = before.key_backbone.as_ref().unwrap().param_hash();
        let outcome = pretrain(&ds, &policy, &hca, &cfg, None, &RunOptions::default()).unwrap();
        assert_eq!(
            outcome.model.key_backbone.as_ref().unwrap().param_hash(),
            before_hash
        );

        // m = 0: key equals query after the update
        cfg.moco_momentum = 0.0;
        let outcome = pretrain(&ds, &policy, &hca, &cfg, None, &RunOptions::default()).unwrap();
        assert_eq!(
            outcome.model.key_backbone.as_ref().unwrap().param_hash(),
            outcome.model.backbone.param_hash()
        );
    }

    #[test]
    fn momentum_update_identity_elementwise() {
        let (ds, policy, hca, mut cfg) = tiny_training_setup(SslMethod::Mocov2);
        cfg.epochs = 0;
        cfg.moco_momentum = 0.9;
        let mut rng = RngStream::new("model-init", cfg.seed);
        let mut model = SiameseModel::new(&cfg, hca.output_scale, &mut rng);

        let key_before: Vec<f64> = model
            .key_backbone
            .as_ref()
            .unwrap()
            .params()
            .iter()
            .flat_map(|p| p.value.iter().copied().collect::<Vec<_>>())
            .collect();

        // one manual step
        let mut aug_rng = RngStream::new("pairs", 0);
        let recs = crate::dataset::sample_minibatch(&ds, Split::Train, cfg.batch_size, &mut aug_rng)
            .unwrap();
        let pairs: Vec<ViewPair> = recs
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                make_view_pair(rec, &policy, &hca, None, &RngStream::new(format!("i{i}"), 1))
                    .unwrap()
            })
            .collect();
        let opt = SgdConfig {
            momentum: cfg.sgd_momentum,
            weight_decay: cfg.weight_decay,
        };
        mocov2_step(&mut model, &pairs, 0.05, opt, 0.9, cfg.temperature).unwrap();

        let query_after: Vec<f64> = model
            .backbone
            .params()
            .iter()
            .flat_map(|p| p.value.iter().copied().collect::<Vec<_>>())
            .collect();
        let key_after: Vec<f64> = model
            .key_backbone
            .as_ref()
            .unwrap()
            .params()
            .iter()
            .flat_map(|p| p.value.iter().copied().collect::<Vec<_>>())
            .collect();
        for i in 0..key_after.len() {
            let expected = 0.9 * key_before[i] + 0.1 * query_after[i];
            assert!(
                (key_after[i] - expected).abs() < 1e-6,
                "momentum identity violated at {i}"
            );
        }
    }

    #[test]
    fn missing_heads_are_rejected() {
        let (_, _, hca, mut cfg) = tiny_training_setup(SslMethod::Simsiam);
        cfg.epochs = 0;
        let mut rng = RngStream::new("model-init", 0);
        let mut model = SiameseModel::new(&cfg, hca.output_scale, &mut rng);
        model.predictor = None;
        let pairs = vec![];
        assert!(matches!(
            simsiam_step(
                &mut model,
                &pairs,
                0.1,
                SgdConfig {
                    momentum: 0.9,
                    weight_decay: 0.0
                }
            ),
            Err(Error::MissingHead("predictor"))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (ds, policy, hca, mut cfg) = tiny_training_setup(SslMethod::Simsiam);
        cfg.epochs = 1;
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            verbose: false,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            config_hash: Some("deadbeef".into()),
        };
        let outcome = pretrain(&ds, &policy, &hca, &cfg, None, &opts).unwrap();
        let path = dir.path().join("epoch_0000.json");
        assert!(path.exists());
        let (loaded, loaded_cfg, epoch) = load_model_checkpoint(&path).unwrap();
        assert_eq!(epoch, 0);
        assert_eq!(loaded_cfg, cfg);
        assert_eq!(
            loaded.backbone.param_hash(),
            outcome.model.backbone.param_hash()
        );
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.contains("deadbeef"), "checkpoint embeds the config hash");
    }
}
