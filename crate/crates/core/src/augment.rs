//! The handcrafted augmentation pipeline (crop / jitter / grayscale / blur /
//! flip) and its probabilistic composition with manifold view sampling.
//!
//! Stream discipline: the manifold coin flips, the sampler randomness, and
//! the two per-view handcrafted draws consume from separate named substreams
//! of the caller's per-instance stream. Because substreams are independent,
//! an `alpha = 0` pipeline is bit-identical to one with sampling disabled —
//! the equivalence the paired A/B experiments rely on.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ImageRecord;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::generator::{sample_view, GeneratorBackend, LatentPrior};
use crate::image_ops::{
    adjust_brightness, adjust_contrast, adjust_hue, adjust_saturation, clamp01, crop,
    flip_horizontal, gaussian_blur, resize_bilinear, to_grayscale, Image,
};
use crate::rng::RngStream;

// ── Handcrafted pipeline ────────────────────────────────────────────────────

/// Parameters of the handcrafted pipeline, applied in the fixed order
/// crop -> jitter -> grayscale -> blur -> flip.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HcaConfig {
    pub crop_area_range: (f64, f64),
    pub crop_aspect_range: (f64, f64),
    pub output_scale: usize,
    pub brightness_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub saturation_range: (f64, f64),
    pub hue_range: (f64, f64),
    pub p_jitter: f64,
    pub p_grayscale: f64,
    pub blur_radius_range: (f64, f64),
    pub p_blur: f64,
    pub p_flip: f64,
}

impl HcaConfig {
    /// Standard pipeline for a given output size. Blur is disabled at small
    /// (CIFAR-class, <= 32 px) resolutions.
    pub fn for_resolution(output_scale: usize) -> Self {
        HcaConfig {
            crop_area_range: (0.2, 1.0),
            crop_aspect_range: (3.0 / 4.0, 4.0 / 3.0),
            output_scale,
            brightness_range: (0.6, 1.4),
            contrast_range: (0.6, 1.4),
            saturation_range: (0.6, 1.4),
            hue_range: (-0.1, 0.1),
            p_jitter: 0.8,
            p_grayscale: 0.2,
            blur_radius_range: (1.0, 2.0),
            p_blur: if output_scale <= 32 { 0.0 } else { 0.5 },
            p_flip: 0.5,
        }
    }

    /// Degenerate configuration that reduces to a deterministic resize.
    pub fn identity(output_scale: usize) -> Self {
        HcaConfig {
            crop_area_range: (1.0, 1.0),
            crop_aspect_range: (1.0, 1.0),
            output_scale,
            brightness_range: (1.0, 1.0),
            contrast_range: (1.0, 1.0),
            saturation_range: (1.0, 1.0),
            hue_range: (0.0, 0.0),
            p_jitter: 0.0,
            p_grayscale: 0.0,
            blur_radius_range: (1.0, 1.0),
            p_blur: 0.0,
            p_flip: 0.0,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let mut prob = |name: &str, p: f64| {
            if !(0.0..=1.0).contains(&p) {
                issues.push(format!("{name} must be a probability, got {p}"));
            }
        };
        prob("p_jitter", self.p_jitter);
        prob("p_grayscale", self.p_grayscale);
        prob("p_blur", self.p_blur);
        prob("p_flip", self.p_flip);
        if !(self.crop_area_range.0 > 0.0
            && self.crop_area_range.0 <= self.crop_area_range.1
            && self.crop_area_range.1 <= 1.0)
        {
            issues.push(format!(
                "crop_area_range must satisfy 0 < lo <= hi <= 1, got {:?}",
                self.crop_area_range
            ));
        }
        if !(self.crop_aspect_range.0 > 0.0
            && self.crop_aspect_range.0 <= self.crop_aspect_range.1)
        {
            issues.push(format!(
                "crop_aspect_range must be positive and ordered, got {:?}",
                self.crop_aspect_range
            ));
        }
        if self.output_scale == 0 {
            issues.push("output_scale must be >= 1".into());
        }
        issues
    }
}

/// What one handcrafted pass actually did; used by the pipeline-trace tests.
#[derive(Debug, Clone)]
pub struct HcaTrace {
    pub crop_box: (usize, usize, usize, usize), // top, left, height, width
    pub crop_fallback: bool,
    pub jitter_fired: bool,
    pub jitter_order: Vec<u8>,
    pub grayscale_fired: bool,
    pub blur_fired: bool,
    pub blur_sigma: f64,
    pub flip_fired: bool,
}

fn draw_crop_box(
    img: &Image,
    cfg: &HcaConfig,
    rng: &mut RngStream,
) -> ((usize, usize, usize, usize), bool) {
    let (h, w, _) = img.dim();
    let area = (h * w) as f64;
    for _ in 0..10 {
        let target = area * rng.random_range(cfg.crop_area_range.0..=cfg.crop_area_range.1);
        let log_lo = cfg.crop_aspect_range.0.ln();
        let log_hi = cfg.crop_aspect_range.1.ln();
        let aspect = rng.random_range(log_lo..=log_hi).exp();
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return ((top, left, ch, cw), false);
        }
    }
    // degenerate after 10 redraws: deterministic center crop
    let side = h.min(w);
    (((h - side) / 2, (w - side) / 2, side, side), true)
}

/// Apply the handcrafted pipeline, returning the per-call trace.
pub fn apply_hca_traced(image: &Image, cfg: &HcaConfig, rng: &mut RngStream) -> (Image, HcaTrace) {
    // crop
    let (crop_box, crop_fallback) = draw_crop_box(image, cfg, rng);
    let (top, left, ch, cw) = crop_box;
    let cropped = crop(image, top, left, ch, cw);
    let mut img = resize_bilinear(&cropped, cfg.output_scale, cfg.output_scale);

    // jitter: brightness/contrast/saturation/hue in a random order per draw
    let jitter_fired = rng.random::<f64>() < cfg.p_jitter;
    let mut jitter_order = Vec::new();
    if jitter_fired {
        let mut order: Vec<u8> = vec![0, 1, 2, 3];
        use rand::seq::SliceRandom;
        order.shuffle(rng);
        for &op in &order {
            match op {
                0 => adjust_brightness(
                    &mut img,
                    rng.random_range(cfg.brightness_range.0..=cfg.brightness_range.1) as f32,
                ),
                1 => adjust_contrast(
                    &mut img,
                    rng.random_range(cfg.contrast_range.0..=cfg.contrast_range.1) as f32,
                ),
                2 => adjust_saturation(
                    &mut img,
                    rng.random_range(cfg.saturation_range.0..=cfg.saturation_range.1) as f32,
                ),
                _ => adjust_hue(
                    &mut img,
                    rng.random_range(cfg.hue_range.0..=cfg.hue_range.1) as f32,
                ),
            }
        }
        jitter_order = order;
    }

    // grayscale
    let grayscale_fired = rng.random::<f64>() < cfg.p_grayscale;
    if grayscale_fired {
        img = to_grayscale(&img);
    }

    // blur
    let blur_fired = rng.random::<f64>() < cfg.p_blur;
    let mut blur_sigma = 0.0;
    if blur_fired {
        blur_sigma = rng.random_range(cfg.blur_radius_range.0..=cfg.blur_radius_range.1);
        img = gaussian_blur(&img, blur_sigma as f32);
    }

    // flip
    let flip_fired = rng.random::<f64>() < cfg.p_flip;
    if flip_fired {
        img = flip_horizontal(&img);
    }

    clamp01(&mut img);
    (
        img,
        HcaTrace {
            crop_box,
            crop_fallback,
            jitter_fired,
            jitter_order,
            grayscale_fired,
            blur_fired,
            blur_sigma,
            flip_fired,
        },
    )
}

pub fn apply_hca(image: &Image, cfg: &HcaConfig, rng: &mut RngStream) -> Image {
    apply_hca_traced(image, cfg, rng).0
}

// ── Manifold-augmentation policy ────────────────────────────────────────────

/// How manifold sampling composes with the handcrafted pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LmaMode {
    /// Per-view Bernoulli(alpha): a firing view's base image is replaced by a
    /// manifold sample before the handcrafted pass.
    Lma,
    /// One Bernoulli(alpha) per instance: on heads a single generated sample
    /// replaces the instance as the base for both views (source mixing
    /// without extra multiview variation).
    Mix,
    /// Handcrafted pipeline only.
    Off,
}

/// Manifold-augmentation policy: application probability, composition mode,
/// backend, and latent prior.
#[derive(Debug, Clone)]
pub struct LmaPolicy {
    pub alpha: f64,
    pub mode: LmaMode,
    pub backend: Option<Arc<GeneratorBackend>>,
    pub prior: LatentPrior,
    /// Mix mode: share one generated base across both views (default), or
    /// draw an independent replacement per view under the single coin.
    pub mix_shared_base: bool,
}

impl LmaPolicy {
    pub fn off() -> Self {
        LmaPolicy {
            alpha: 0.0,
            mode: LmaMode::Off,
            backend: None,
            prior: LatentPrior::standard_normal(1),
            mix_shared_base: true,
        }
    }

    pub fn new(alpha: f64, mode: LmaMode, backend: Arc<GeneratorBackend>, prior: LatentPrior) -> Self {
        LmaPolicy {
            alpha,
            mode,
            backend: Some(backend),
            prior,
            mix_shared_base: true,
        }
    }

    /// Whether manifold sampling can fire at all under this policy.
    pub fn active(&self) -> bool {
        self.mode != LmaMode::Off
    }

    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !(0.0..=1.0).contains(&self.alpha) {
            issues.push(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if self.active() && self.backend.is_none() {
            issues.push("mode requires a generator backend".into());
        }
        issues
    }
}

/// The two augmented views of one instance.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub view1: Image,
    pub view2: Image,
    /// Per view: true when the base image came from the manifold sampler.
    pub source_flags: [bool; 2],
}

/// Instrumentation record for one [`make_view_pair_traced`] call.
#[derive(Debug, Clone)]
pub struct PairTrace {
    pub coins: [bool; 2],
    /// Base image of each view after manifold sampling, before the
    /// handcrafted pass.
    pub bases: [Image; 2],
    pub hca: [HcaTrace; 2],
}

fn sample_base(
    policy: &LmaPolicy,
    x_i: &ImageRecord,
    embedder: Option<&Encoder>,
    rng: &mut RngStream,
) -> Result<Image> {
    let backend = policy
        .backend
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(vec!["policy has no backend".into()]))?;
    sample_view(backend, x_i, &policy.prior, embedder, rng)
}

/// Produce the two training views of `x_i`.
///
/// Manifold sampling is applied strictly before the handcrafted pipeline:
/// the conditioning extractor behind a learned backend is invariance-trained,
/// so sampling after the handcrafted pass would undo it.
pub fn make_view_pair_traced(
    x_i: &ImageRecord,
    policy: &LmaPolicy,
    cfg: &HcaConfig,
    embedder: Option<&Encoder>,
    rng: &RngStream,
) -> Result<(ViewPair, PairTrace)> {
    if policy.active() {
        if let Some(backend) = &policy.backend {
            let res = x_i.resolution();
            if backend.resolution() != res {
                return Err(Error::ResolutionMismatch {
                    expected: backend.resolution(),
                    actual: res,
                });
            }
        }
    }
    let mut coin_rng = rng.substream("lma-coin");
    let mut coin = |alpha: f64| coin_rng.random::<f64>() < alpha;

    let (coins, bases): ([bool; 2], [Image; 2]) = match policy.mode {
        LmaMode::Off => ([false, false], [x_i.pixels.clone(), x_i.pixels.clone()]),
        LmaMode::Lma => {
            let c1 = coin(policy.alpha);
            let c2 = coin(policy.alpha);
            let b1 = if c1 {
                sample_base(policy, x_i, embedder, &mut rng.substream("lma-sample/0"))?
            } else {
                x_i.pixels.clone()
            };
            let b2 = if c2 {
                sample_base(policy, x_i, embedder, &mut rng.substream("lma-sample/1"))?
            } else {
                x_i.pixels.clone()
            };
            ([c1, c2], [b1, b2])
        }
        LmaMode::Mix => {
            let c = coin(policy.alpha);
            if c {
                if policy.mix_shared_base {
                    let base =
                        sample_base(policy, x_i, embedder, &mut rng.substream("lma-sample/0"))?;
                    ([true, true], [base.clone(), base])
                } else {
                    let b1 =
                        sample_base(policy, x_i, embedder, &mut rng.substream("lma-sample/0"))?;
                    let b2 =
                        sample_base(policy, x_i, embedder, &mut rng.substream("lma-sample/1"))?;
                    ([true, true], [b1, b2])
                }
            } else {
                ([false, false], [x_i.pixels.clone(), x_i.pixels.clone()])
            }
        }
    };

    let (view1, trace1) = apply_hca_traced(&bases[0], cfg, &mut rng.substream("hca/0"));
    let (view2, trace2) = apply_hca_traced(&bases[1], cfg, &mut rng.substream("hca/1"));
    Ok((
        ViewPair {
            view1,
            view2,
            source_flags: coins,
        },
        PairTrace {
            coins,
            bases,
            hca: [trace1, trace2],
        },
    ))
}

pub fn make_view_pair(
    x_i: &ImageRecord,
    policy: &LmaPolicy,
    cfg: &HcaConfig,
    embedder: Option<&Encoder>,
    rng: &RngStream,
) -> Result<ViewPair> {
    make_view_pair_traced(x_i, policy, cfg, embedder, rng).map(|(pair, _)| pair)
}
