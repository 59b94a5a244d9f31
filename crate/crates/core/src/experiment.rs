//! Config-driven experiment orchestration: single pretraining runs with
//! probe and invariance evaluation, ablation sweeps over the application
//! probability / view count / neighborhood size, artifact persistence, and
//! plot emission.
//!
//! Configs are TOML with a schema version; unknown keys are rejected. A
//! run's identity is the SHA-256 of its canonical JSON form (sorted keys),
//! so field order never changes the hash, and artifact directories are
//! write-once per hash.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{HcaConfig, LmaMode, LmaPolicy};
use crate::dataset::{
    load_dataset, make_synthetic_manifold, synthetic::parse_factors, DatasetHandle, Split,
};
use crate::encoder::{embed_batch, load_encoder_checkpoint, Encoder};
use crate::error::{Error, Result};
use crate::eval::{
    eval_split, evaluate_shifted, invariance_report, train_linear_probe, InvarianceReport,
    LinearProbeConfig, ProbeReport,
};
use crate::generator::{
    load_generator_checkpoint, restrict_prior_to_finite, BackendKind, GeneratorBackend,
    LatentPrior,
};
use crate::knn::build_index;
use crate::plot::{line_chart, table_svg, Series};
use crate::rng::RngStream;
use crate::train::{pretrain, save_model_checkpoint, RunOptions, TrainConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

// ── Config surface ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Rendered on the fly; no files needed.
    Synthetic {
        n_concepts: usize,
        views_per_concept: usize,
        factors: Vec<String>,
        resolution: usize,
        seed: u64,
        /// Fraction of every orbit held out as the validation split.
        val_fraction: f64,
    },
    /// One of the named on-disk datasets or a manifest directory.
    Named { name: String, root: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbedderConfig {
    /// Deterministic random projection (no training required).
    OracleLinear { dim: usize, seed: u64 },
    /// A pretrained extractor checkpoint.
    Checkpoint { path: PathBuf },
}

impl EmbedderConfig {
    fn build(&self, resolution: usize) -> Result<Encoder> {
        match self {
            EmbedderConfig::OracleLinear { dim, seed } => {
                Ok(Encoder::oracle_linear(resolution, *dim, *seed, true))
            }
            EmbedderConfig::Checkpoint { path } => load_encoder_checkpoint(path),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Ground-truth orbit sampler over the train split.
    OracleManifold {
        #[serde(default)]
        mode_cap: Option<usize>,
        #[serde(default)]
        corruption_rate: f64,
        #[serde(default)]
        fidelity_sigma: f64,
        #[serde(default)]
        cap_seed: u64,
    },
    /// Nearest-neighbor views under the given embedder.
    Knn {
        k: usize,
        include_self: bool,
        embedder: EmbedderConfig,
    },
    /// Conditional decoder from a checkpoint, conditioned via the embedder.
    InstanceConditioned {
        checkpoint: PathBuf,
        embedder: EmbedderConfig,
    },
    /// Latent traversal decoder from a checkpoint.
    Traversal { checkpoint: PathBuf, sigma: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorConfig {
    StandardNormal { dim: usize },
    /// A pre-sampled set of `n` latents (bounds distinct views per condition).
    Finite { dim: usize, n: usize, seed: u64 },
}

impl PriorConfig {
    fn build(&self) -> Result<LatentPrior> {
        match self {
            PriorConfig::StandardNormal { dim } => Ok(LatentPrior::standard_normal(*dim)),
            PriorConfig::Finite { dim, n, seed } => {
                restrict_prior_to_finite(*dim, *n, &mut RngStream::new("finite-prior", *seed))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub alpha: f64,
    pub mode: LmaMode,
    pub backend: BackendConfig,
    pub prior: PriorConfig,
    #[serde(default = "default_true")]
    pub mix_shared_base: bool,
}

fn default_true() -> bool {
    true
}

/// The full experiment surface; round-trips losslessly through TOML.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetConfig,
    pub policy: PolicyConfig,
    pub hca: HcaConfig,
    pub train: TrainConfig,
    pub probe: LinearProbeConfig,
    /// Training seeds; results are averaged over them.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Collect every config problem in one pass.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            issues.push(format!(
                "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                n_concepts,
                views_per_concept,
                factors,
                resolution,
                val_fraction,
                ..
            } => {
                if *n_concepts == 0 || *views_per_concept == 0 || *resolution == 0 {
                    issues.push("synthetic dataset dimensions must be >= 1".into());
                }
                if let Err(e) = parse_factors(factors) {
                    issues.push(e.to_string());
                }
                if !(0.0..1.0).contains(val_fraction) {
                    issues.push(format!("val_fraction must be in [0, 1), got {val_fraction}"));
                }
            }
            DatasetConfig::Named { name, .. } => {
                if !matches!(
                    name.as_str(),
                    "cifar10" | "cifar100" | "stl10" | "imagenet100" | "manifest"
                ) {
                    issues.push(format!("unknown dataset name `{name}`"));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.policy.alpha) {
            issues.push(format!("alpha must be in [0, 1], got {}", self.policy.alpha));
        }
        if let BackendConfig::OracleManifold {
            corruption_rate, ..
        } = &self.policy.backend
        {
            if !(0.0..=1.0).contains(corruption_rate) {
                issues.push(format!(
                    "corruption_rate must be in [0, 1], got {corruption_rate}"
                ));
            }
        }
        issues.extend(self.hca.validate());
        issues.extend(self.train.validate());
        issues.extend(self.probe.validate());
        if self.seeds.is_empty() {
            issues.push("at least one seed is required".into());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(issues))
        }
    }

    /// Content hash over the canonical JSON form: key order in the source
    /// file cannot change it.
    pub fn content_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("canonical form");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn short_hash(&self) -> String {
        self.content_hash()[..12].to_string()
    }
}

pub fn parse_config(toml_text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(toml_text).map_err(|e| Error::InvalidConfig(vec![e.to_string()]))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text)
}

pub fn config_to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::Serde(e.to_string()))
}

// ── Resource construction ───────────────────────────────────────────────────

pub fn build_dataset(cfg: &DatasetConfig) -> Result<Arc<DatasetHandle>> {
    match cfg {
        DatasetConfig::Synthetic {
            n_concepts,
            views_per_concept,
            factors,
            resolution,
            seed,
            val_fraction,
        } => {
            let parsed = parse_factors(factors)?;
            let ds = make_synthetic_manifold(
                *n_concepts,
                *views_per_concept,
                &parsed,
                *resolution,
                *seed,
            )?;
            let ds = if *val_fraction > 0.0 {
                ds.with_holdout(*val_fraction, *seed)?
            } else {
                ds
            };
            Ok(Arc::new(ds))
        }
        DatasetConfig::Named { name, root } => Ok(Arc::new(load_dataset(name, root)?)),
    }
}

/// Build the policy's backend over `dataset`, returning the conditioning
/// embedder when one is involved.
pub fn build_backend(
    cfg: &BackendConfig,
    dataset: &Arc<DatasetHandle>,
) -> Result<(Arc<GeneratorBackend>, Option<Encoder>)> {
    match cfg {
        BackendConfig::OracleManifold {
            mode_cap,
            corruption_rate,
            fidelity_sigma,
            cap_seed,
        } => {
            let mut backend = GeneratorBackend::oracle_manifold(dataset.clone(), Some(Split::Train));
            if let Some(cap) = mode_cap {
                backend = backend.with_mode_cap(*cap, *cap_seed);
            }
            if *corruption_rate > 0.0 {
                backend = backend.with_corruption(*corruption_rate);
            }
            if *fidelity_sigma > 0.0 {
                backend = backend.with_fidelity_sigma(*fidelity_sigma);
            }
            Ok((Arc::new(backend), None))
        }
        BackendConfig::Knn {
            k,
            include_self,
            embedder,
        } => {
            let enc = embedder.build(dataset.resolution())?;
            let records: Vec<_> = dataset.iter_split(Split::Train).collect();
            let emb = embed_batch(&enc, &records)?;
            let index = build_index(emb, *k, *include_self)?;
            Ok((
                Arc::new(GeneratorBackend::Knn {
                    index,
                    dataset: dataset.clone(),
                }),
                Some(enc),
            ))
        }
        BackendConfig::InstanceConditioned {
            checkpoint,
            embedder,
        } => {
            let backend = load_generator_checkpoint(checkpoint, BackendKind::InstanceConditioned)?;
            let enc = embedder.build(dataset.resolution())?;
            Ok((Arc::new(backend), Some(enc)))
        }
        BackendConfig::Traversal { checkpoint, sigma } => {
            let backend = load_generator_checkpoint(checkpoint, BackendKind::Traversal)?;
            let backend = match backend {
                GeneratorBackend::Traversal { net, .. } => GeneratorBackend::Traversal {
                    net,
                    sigma: *sigma,
                },
                other => other,
            };
            Ok((Arc::new(backend), None))
        }
    }
}

pub fn build_policy(
    cfg: &PolicyConfig,
    dataset: &Arc<DatasetHandle>,
) -> Result<(LmaPolicy, Option<Encoder>)> {
    if cfg.mode == LmaMode::Off {
        return Ok((LmaPolicy::off(), None));
    }
    let (backend, embedder) = build_backend(&cfg.backend, dataset)?;
    let mut policy = LmaPolicy::new(cfg.alpha, cfg.mode, backend, cfg.prior.build()?);
    policy.mix_shared_base = cfg.mix_shared_base;
    Ok((policy, embedder))
}

// ── Run artifacts ───────────────────────────────────────────────────────────

/// Outcome of one seed's pretrain + probe + invariance pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub final_loss: f64,
    pub probe: ProbeReport,
    pub invariance: InvarianceReport,
}

/// A persisted experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub run_dir: PathBuf,
    pub outcomes: Vec<SeedOutcome>,
    pub mean_top1: f64,
    pub mean_top5: f64,
    pub mean_cosine: f64,
    pub mean_mahalanobis: f64,
    /// Fréchet distance between backend samples and real features, when the
    /// run computed one (neighborhood sweeps).
    pub backend_fid: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RunSummaryFile {
    schema: String,
    config_hash: String,
    artifact: RunArtifact,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Serialize, Deserialize)]
struct HashedReport<T> {
    config_hash: String,
    report: T,
}

/// Execute pretrain + linear probe + invariance report for every seed and
/// persist the artifact directory (write-once per config hash).
pub fn run_pretrain(cfg: &ExperimentConfig, verbose: bool) -> Result<RunArtifact> {
    cfg.validate()?;
    let config_hash = cfg.content_hash();
    let run_dir = cfg.output_dir.join(cfg.short_hash());
    if run_dir.exists() {
        return Err(Error::ArtifactExists(run_dir.display().to_string()));
    }
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(run_dir.display().to_string(), e))?;
    std::fs::write(run_dir.join("config.toml"), config_to_toml(cfg)?)
        .map_err(|e| Error::io(run_dir.display().to_string(), e))?;

    let dataset = build_dataset(&cfg.dataset)?;
    let (policy, embedder) = build_policy(&cfg.policy, &dataset)?;

    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        let seed_dir = run_dir.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&seed_dir)
            .map_err(|e| Error::io(seed_dir.display().to_string(), e))?;
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = seed;

        let opts = RunOptions {
            verbose,
            checkpoint_dir: Some(seed_dir.join("checkpoints")),
            config_hash: Some(config_hash.clone()),
        };
        let outcome = pretrain(&dataset, &policy, &cfg.hca, &train_cfg, embedder.as_ref(), &opts)?;

        // metric log: header line with the config hash, then one record per step
        let metrics_path = seed_dir.join("metrics.jsonl");
        let mut file = std::fs::File::create(&metrics_path)
            .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
        writeln!(
            file,
            "{}",
            serde_json::to_string(&serde_json::json!({
                "schema": "lma-metrics-v1",
                "config_hash": config_hash,
                "seed": seed,
            }))?
        )
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
        for record in &outcome.metrics {
            writeln!(file, "{}", serde_json::to_string(record)?)
                .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
        }

        // final checkpoint even for epoch-0 runs
        save_model_checkpoint(
            &outcome.model,
            &train_cfg,
            cfg.train.epochs,
            Some(&config_hash),
            &seed_dir.join("checkpoints").join("final.json"),
        )?;

        let (_, probe_report) = train_linear_probe(&outcome.model.backbone, &dataset, &cfg.probe)?;
        let invariance =
            invariance_report(&outcome.model.backbone, &dataset, eval_split(&dataset))?;
        write_json(
            &seed_dir.join("probe.json"),
            &HashedReport {
                config_hash: config_hash.clone(),
                report: probe_report.clone(),
            },
        )?;
        write_json(
            &seed_dir.join("invariance.json"),
            &HashedReport {
                config_hash: config_hash.clone(),
                report: invariance.clone(),
            },
        )?;

        outcomes.push(SeedOutcome {
            seed,
            final_loss: outcome.metrics.last().map(|m| m.loss).unwrap_or(f64::NAN),
            probe: probe_report,
            invariance,
        });
    }

    let n = outcomes.len() as f64;
    let artifact = RunArtifact {
        config: cfg.clone(),
        config_hash: config_hash.clone(),
        run_dir: run_dir.clone(),
        mean_top1: outcomes.iter().map(|o| o.probe.top1).sum::<f64>() / n,
        mean_top5: outcomes.iter().map(|o| o.probe.top5).sum::<f64>() / n,
        mean_cosine: outcomes.iter().map(|o| o.invariance.cosine.overall).sum::<f64>() / n,
        mean_mahalanobis: outcomes
            .iter()
            .map(|o| o.invariance.mahalanobis.overall)
            .sum::<f64>()
            / n,
        backend_fid: None,
        outcomes,
    };
    write_json(
        &run_dir.join("run.json"),
        &RunSummaryFile {
            schema: "lma-run-v1".into(),
            config_hash,
            artifact: artifact.clone(),
        },
    )?;
    Ok(artifact)
}

pub fn load_artifact(run_dir: &Path) -> Result<RunArtifact> {
    let path = run_dir.join("run.json");
    let raw =
        std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let summary: RunSummaryFile = serde_json::from_str(&raw)?;
    Ok(summary.artifact)
}

/// Fréchet distance between backend-sampled views and real records, both
/// embedded by `encoder`. Used as the backend-quality score in sweeps.
pub fn backend_fid(
    backend: &GeneratorBackend,
    dataset: &DatasetHandle,
    encoder: &Encoder,
    prior: &LatentPrior,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let train_ids = dataset.split_ids(Split::Train);
    let mut rng = RngStream::new("backend-fid", seed);
    use rand::Rng;
    let mut generated = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let id = train_ids[rng.random_range(0..train_ids.len())];
        let rec = dataset.get(id).unwrap();
        generated.push(crate::generator::sample_view(
            backend, rec, prior, None, &mut rng,
        )?);
    }
    let generated_refs: Vec<&crate::image_ops::Image> = generated.iter().collect();
    let gen_feats = encoder.embed_pixels(&generated_refs)?;

    let mut real = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let id = train_ids[rng.random_range(0..train_ids.len())];
        real.push(&dataset.get(id).unwrap().pixels);
    }
    let real_feats = encoder.embed_pixels(&real)?;

    let gen_emb = crate::encoder::EmbeddingMatrix::new(
        gen_feats,
        (0..n_samples).collect(),
        encoder.normalize_output,
    );
    let real_emb = crate::encoder::EmbeddingMatrix::new(
        real_feats,
        (0..n_samples).collect(),
        encoder.normalize_output,
    );
    crate::eval::frechet_distance(&gen_emb, &real_emb)
}

// ── Sweeps ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaSweepRow {
    pub mode: LmaMode,
    pub alpha: f64,
    pub mean_top1: f64,
    pub mean_cosine: f64,
}

/// One run per (mode, alpha) cell with shared seeds.
pub fn sweep_alpha(
    base: &ExperimentConfig,
    alphas: &[f64],
    modes: &[LmaMode],
    verbose: bool,
) -> Result<(Vec<AlphaSweepRow>, Vec<RunArtifact>)> {
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for &mode in modes {
        for &alpha in alphas {
            let mut cfg = base.clone();
            cfg.policy.alpha = alpha;
            cfg.policy.mode = mode;
            let artifact = run_pretrain(&cfg, verbose)?;
            rows.push(AlphaSweepRow {
                mode,
                alpha,
                mean_top1: artifact.mean_top1,
                mean_cosine: artifact.mean_cosine,
            });
            artifacts.push(artifact);
        }
    }
    Ok((rows, artifacts))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewsSweepRow {
    /// `None` is the unrestricted (standard-normal) prior.
    pub views: Option<usize>,
    pub mean_top1: f64,
}

/// Finite-view ablation: one run per count, plus the standard-normal run for
/// a `None` entry.
pub fn sweep_views(
    base: &ExperimentConfig,
    view_counts: &[Option<usize>],
    verbose: bool,
) -> Result<(Vec<ViewsSweepRow>, Vec<RunArtifact>)> {
    let dim = match &base.policy.prior {
        PriorConfig::StandardNormal { dim } => *dim,
        PriorConfig::Finite { dim, .. } => *dim,
    };
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for &views in view_counts {
        let mut cfg = base.clone();
        cfg.policy.prior = match views {
            Some(n) => PriorConfig::Finite {
                dim,
                n,
                seed: base.seeds[0],
            },
            None => PriorConfig::StandardNormal { dim },
        };
        let artifact = run_pretrain(&cfg, verbose)?;
        rows.push(ViewsSweepRow {
            views,
            mean_top1: artifact.mean_top1,
        });
        artifacts.push(artifact);
    }
    Ok((rows, artifacts))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub fid: f64,
    pub mean_top1: f64,
}

/// Neighborhood-size ablation: rebuilds the neighbor structures per `k` and
/// records the backend's Fréchet score next to the probe accuracy.
pub fn sweep_k(
    base: &ExperimentConfig,
    ks: &[usize],
    verbose: bool,
) -> Result<(Vec<KSweepRow>, Vec<RunArtifact>)> {
    let BackendConfig::Knn {
        include_self,
        embedder,
        ..
    } = &base.policy.backend
    else {
        return Err(Error::InvalidConfig(vec![
            "sweep-k needs a knn backend in the base config".into(),
        ]));
    };
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for &k in ks {
        let mut cfg = base.clone();
        cfg.policy.backend = BackendConfig::Knn {
            k,
            include_self: *include_self,
            embedder: embedder.clone(),
        };
        let dataset = build_dataset(&cfg.dataset)?;
        let (backend, enc) = build_backend(&cfg.policy.backend, &dataset)?;
        let enc = enc.expect("knn backend builds an embedder");
        let fid = backend_fid(
            &backend,
            &dataset,
            &enc,
            &cfg.policy.prior.build()?,
            (dataset.split_ids(Split::Train).len()).min(2048),
            base.seeds[0],
        )?;
        let mut artifact = run_pretrain(&cfg, verbose)?;
        artifact.backend_fid = Some(fid);
        rows.push(KSweepRow {
            k,
            fid,
            mean_top1: artifact.mean_top1,
        });
        artifacts.push(artifact);
    }
    Ok((rows, artifacts))
}

// ── Plot emission ───────────────────────────────────────────────────────────

fn require_comparable(artifacts: &[RunArtifact]) -> Result<()> {
    if artifacts.is_empty() {
        return Err(Error::IncomparableArtifacts("no artifacts given".into()));
    }
    let first = &artifacts[0].config.dataset;
    for a in &artifacts[1..] {
        if &a.config.dataset != first {
            return Err(Error::IncomparableArtifacts(format!(
                "dataset configs differ: {:?} vs {:?}",
                first, a.config.dataset
            )));
        }
    }
    Ok(())
}

/// Emit the standard plots for a set of comparable runs into `dir`:
/// accuracy vs alpha (one curve per mode), accuracy vs view count,
/// accuracy vs backend Fréchet score, and the invariance table.
pub fn emit_plots(artifacts: &[RunArtifact], dir: &Path) -> Result<Vec<PathBuf>> {
    require_comparable(artifacts)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let hash = artifacts[0].config_hash.clone();
    let mut written = Vec::new();

    // accuracy vs alpha, one curve per mode
    let mut by_mode: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for a in artifacts {
        let mode = format!("{:?}", a.config.policy.mode).to_lowercase();
        by_mode
            .entry(mode)
            .or_default()
            .push((a.config.policy.alpha, a.mean_top1));
    }
    let series: Vec<Series> = by_mode
        .into_iter()
        .map(|(label, points)| Series { label, points })
        .collect();
    let path = dir.join("accuracy_vs_alpha.svg");
    line_chart(
        "probe accuracy vs application probability",
        "alpha",
        "top-1 (%)",
        &series,
        &hash,
        &path,
    )?;
    written.push(path);

    // accuracy vs view count (finite priors only; log-x via raw counts)
    let view_points: Vec<(f64, f64)> = artifacts
        .iter()
        .filter_map(|a| match &a.config.policy.prior {
            PriorConfig::Finite { n, .. } => Some((*n as f64, a.mean_top1)),
            PriorConfig::StandardNormal { .. } => None,
        })
        .collect();
    if !view_points.is_empty() {
        let path = dir.join("accuracy_vs_views.svg");
        line_chart(
            "probe accuracy vs distinct views per condition",
            "pre-sampled latents",
            "top-1 (%)",
            &[Series {
                label: "finite prior".into(),
                points: view_points,
            }],
            &hash,
            &path,
        )?;
        written.push(path);
    }

    // accuracy vs backend quality
    let fid_points: Vec<(f64, f64)> = artifacts
        .iter()
        .filter_map(|a| a.backend_fid.map(|fid| (fid, a.mean_top1)))
        .collect();
    if !fid_points.is_empty() {
        let path = dir.join("accuracy_vs_fid.svg");
        line_chart(
            "probe accuracy vs backend Fréchet score",
            "Fréchet distance",
            "top-1 (%)",
            &[Series {
                label: "runs".into(),
                points: fid_points,
            }],
            &hash,
            &path,
        )?;
        written.push(path);
    }

    // invariance table: one row per run, cosine and Mahalanobis means
    let headers = vec![
        "run".to_string(),
        "alpha".to_string(),
        "mode".to_string(),
        "cosine".to_string(),
        "mahalanobis".to_string(),
        "top-1".to_string(),
    ];
    let rows: Vec<Vec<String>> = artifacts
        .iter()
        .map(|a| {
            vec![
                a.config.short_hash(),
                format!("{:.2}", a.config.policy.alpha),
                format!("{:?}", a.config.policy.mode).to_lowercase(),
                format!("{:.4}", a.mean_cosine),
                format!("{:.2}", a.mean_mahalanobis),
                format!("{:.2}", a.mean_top1),
            ]
        })
        .collect();
    let path = dir.join("invariance_table.svg");
    table_svg("group invariance summary", &headers, &rows, &hash, &path)?;
    written.push(path);
    Ok(written)
}

/// Re-evaluate a stored artifact's encoder on a shifted dataset.
pub fn evaluate_artifact_shifted(
    artifact_dir: &Path,
    seed: u64,
    shifted: &DatasetHandle,
) -> Result<f64> {
    let artifact = load_artifact(artifact_dir)?;
    let ckpt_path = artifact_dir
        .join(format!("seed_{seed}"))
        .join("checkpoints")
        .join("final.json");
    let (model, _, _) = crate::train::load_model_checkpoint(&ckpt_path)?;
    let dataset = build_dataset(&artifact.config.dataset)?;
    let (probe, _) = train_linear_probe(&model.backbone, &dataset, &artifact.config.probe)?;
    evaluate_shifted(&model.backbone, &probe, shifted)
}
