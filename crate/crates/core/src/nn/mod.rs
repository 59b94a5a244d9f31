//! Minimal neural-network substrate: parameters, layers with explicit
//! backward passes, optimizers, and the small op set the trainers and the
//! linear probe need. All math is `f64` so gradient contracts can be checked
//! against finite differences.

pub mod layers;
pub mod net;

use ndarray::{Array2, ArrayD};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

/// A trainable tensor with its gradient and momentum buffers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub value: ArrayD<f64>,
    #[serde(skip)]
    pub grad: Option<ArrayD<f64>>,
    pub vel: ArrayD<f64>,
    /// Whether weight decay applies (off for biases and norm parameters).
    pub decay: bool,
}

impl Param {
    pub fn new(value: ArrayD<f64>, decay: bool) -> Self {
        let vel = ArrayD::zeros(value.raw_dim());
        Param {
            value,
            grad: None,
            vel,
            decay,
        }
    }

    pub fn zeros_like(&mut self) {
        self.grad = Some(ArrayD::zeros(self.value.raw_dim()));
    }

    pub fn add_grad(&mut self, g: &ArrayD<f64>) {
        match &mut self.grad {
            Some(existing) => *existing += g,
            None => self.grad = Some(g.clone()),
        }
    }

    pub fn grad_or_zeros(&self) -> ArrayD<f64> {
        self.grad
            .clone()
            .unwrap_or_else(|| ArrayD::zeros(self.value.raw_dim()))
    }
}

/// He-normal initialization.
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> ArrayD<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    ArrayD::from_shape_fn(shape, |_| dist.sample(rng))
}

pub fn uniform_init(shape: &[usize], bound: f64, rng: &mut RngStream) -> ArrayD<f64> {
    ArrayD::from_shape_fn(shape, |_| rng.random_range(-bound..bound))
}

/// SGD with momentum and decoupled parameter-wise weight decay flags:
/// `g += wd * p` (decaying params only), `v = mu * v + g`, `p -= lr * v`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

pub fn sgd_step(params: Vec<&mut Param>, lr: f64, cfg: SgdConfig) {
    for p in params {
        let mut g = p.grad_or_zeros();
        if p.decay && cfg.weight_decay != 0.0 {
            g.scaled_add(cfg.weight_decay, &p.value);
        }
        p.vel.mapv_inplace(|v| v * cfg.momentum);
        p.vel += &g;
        p.value.scaled_add(-lr, &p.vel);
    }
}

/// Layer-adaptive SGD (LARS-style trust ratio), used by the linear probe.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LarsConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub trust_coefficient: f64,
}

impl Default for LarsConfig {
    fn default() -> Self {
        LarsConfig {
            momentum: 0.9,
            weight_decay: 0.0,
            trust_coefficient: 0.001,
        }
    }
}

pub fn lars_step(params: Vec<&mut Param>, lr: f64, cfg: LarsConfig) {
    for p in params {
        let mut g = p.grad_or_zeros();
        if p.decay && cfg.weight_decay != 0.0 {
            g.scaled_add(cfg.weight_decay, &p.value);
        }
        let p_norm = p.value.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let local = if p_norm > 0.0 && g_norm > 0.0 {
            cfg.trust_coefficient * p_norm / g_norm
        } else {
            1.0
        };
        p.vel.mapv_inplace(|v| v * cfg.momentum);
        p.vel.scaled_add(local * lr, &g);
        p.value -= &p.vel;
    }
}

pub fn zero_grads(params: Vec<&mut Param>) {
    for p in params {
        p.grad = None;
    }
}

/// Mean softmax cross-entropy over a batch of logits; returns the loss and
/// the gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    assert_eq!(n, targets.len());
    let mut dlogits = logits.clone();
    let mut loss = 0.0;
    for (i, row) in logits.outer_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += sum.ln() + max - row[targets[i]];
        for (j, e) in exps.iter().enumerate() {
            let p = e / sum;
            dlogits[(i, j)] = (p - if j == targets[i] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, dlogits)
}

/// Row-wise L2 normalization with the inputs cached for backward.
pub struct NormalizedRows {
    pub out: Array2<f64>,
    norms: Vec<f64>,
}

pub fn l2_normalize_rows(x: &Array2<f64>) -> NormalizedRows {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in out.outer_iter_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.mapv_inplace(|v| v / norm);
        norms.push(norm);
    }
    NormalizedRows { out, norms }
}

impl NormalizedRows {
    /// d(normalize)/dx applied to `dout`: `(dout - y * (y . dout)) / |x|`.
    pub fn backward(&self, dout: &Array2<f64>) -> Array2<f64> {
        let mut dx = dout.clone();
        for (i, mut row) in dx.outer_iter_mut().enumerate() {
            let y = self.out.row(i);
            let dot: f64 = y.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            for (d, &yv) in row.iter_mut().zip(y.iter()) {
                *d = (*d - yv * dot) / self.norms[i];
            }
        }
        dx
    }
}
