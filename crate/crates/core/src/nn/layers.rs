//! Layers with explicit forward caches and backward passes.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix1, Ix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

use super::{he_normal, Param};

// ── Linear ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub w: Param, // [in, out]
    pub b: Param, // [out]
}

pub struct LinearCache {
    x: Array2<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        Linear {
            w: Param::new(he_normal(&[in_dim, out_dim], in_dim, rng), true),
            b: Param::new(ArrayD::zeros(vec![out_dim]), false),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.shape()[1]
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LinearCache) {
        let w = self.w.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.b.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = x.dot(&w);
        y += &b;
        (y, LinearCache { x: x.clone() })
    }

    pub fn backward(&mut self, cache: &LinearCache, dy: &Array2<f64>) -> Array2<f64> {
        let w = self.w.value.view().into_dimensionality::<Ix2>().unwrap();
        let dw = cache.x.t().dot(dy);
        let db = dy.sum_axis(Axis(0));
        let dx = dy.dot(&w.t());
        self.w.add_grad(&dw.into_dyn());
        self.b.add_grad(&db.into_dyn());
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
}

// ── Conv2d (3x3-style, im2col) ──────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Conv2d {
    pub w: Param, // [out_c, in_c * k * k]
    pub b: Param, // [out_c]
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvCache {
    cols: Vec<Array2<f64>>, // per image: [oh*ow, in_c*k*k]
    in_h: usize,
    in_w: usize,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut RngStream,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            w: Param::new(he_normal(&[out_channels, fan_in], fan_in, rng), true),
            b: Param::new(ArrayD::zeros(vec![out_channels]), false),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn im2col(&self, x: ndarray::ArrayView3<f64>) -> Array2<f64> {
        let (c_in, h, w) = x.dim();
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        let mut cols = Array2::zeros((oh * ow, c_in * k * k));
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                for c in 0..c_in {
                    for ky in 0..k {
                        let y = (oy * self.stride + ky) as isize - self.pad as isize;
                        if y < 0 || y as usize >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let xx = (ox * self.stride + kx) as isize - self.pad as isize;
                            if xx < 0 || xx as usize >= w {
                                continue;
                            }
                            cols[(row, c * k * k + ky * k + kx)] = x[(c, y as usize, xx as usize)];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, h: usize, w: usize) -> ndarray::Array3<f64> {
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        let mut dx = ndarray::Array3::zeros((self.in_channels, h, w));
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                for c in 0..self.in_channels {
                    for ky in 0..k {
                        let y = (oy * self.stride + ky) as isize - self.pad as isize;
                        if y < 0 || y as usize >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let xx = (ox * self.stride + kx) as isize - self.pad as isize;
                            if xx < 0 || xx as usize >= w {
                                continue;
                            }
                            dx[(c, y as usize, xx as usize)] +=
                                dcols[(row, c * k * k + ky * k + kx)];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, ConvCache) {
        let (n, _, h, w) = x.dim();
        let (oh, ow) = self.out_size(h, w);
        let wmat = self.w.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.b.value.view().into_dimensionality::<Ix1>().unwrap();
        let per_image: Vec<(Array2<f64>, Array2<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let cols = self.im2col(x.index_axis(Axis(0), i));
                let mut y = cols.dot(&wmat.t());
                y += &b;
                (cols, y)
            })
            .collect();
        let mut out = Array4::zeros((n, self.out_channels, oh, ow));
        let mut caches = Vec::with_capacity(n);
        for (i, (cols, y)) in per_image.into_iter().enumerate() {
            for oc in 0..self.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        out[(i, oc, oy, ox)] = y[(oy * ow + ox, oc)];
                    }
                }
            }
            caches.push(cols);
        }
        (
            out,
            ConvCache {
                cols: caches,
                in_h: h,
                in_w: w,
            },
        )
    }

    pub fn backward(&mut self, cache: &ConvCache, dy: &Array4<f64>) -> Array4<f64> {
        let (n, oc, oh, ow) = dy.dim();
        let wmat = self
            .w
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .to_owned();
        let per_image: Vec<(ndarray::Array3<f64>, Array2<f64>, Array1<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut dy_mat = Array2::zeros((oh * ow, oc));
                for c in 0..oc {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            dy_mat[(oy * ow + ox, c)] = dy[(i, c, oy, ox)];
                        }
                    }
                }
                let dcols = dy_mat.dot(&wmat);
                let dw = dy_mat.t().dot(&cache.cols[i]);
                let db = dy_mat.sum_axis(Axis(0));
                let dx = self.col2im(&dcols, cache.in_h, cache.in_w);
                (dx, dw, db)
            })
            .collect();

        let mut dx = Array4::zeros((n, self.in_channels, cache.in_h, cache.in_w));
        let mut dw_total = Array2::<f64>::zeros((oc, self.in_channels * self.kernel * self.kernel));
        let mut db_total = Array1::<f64>::zeros(oc);
        // fixed accumulation order keeps runs bit-reproducible
        for (i, (dxi, dw, db)) in per_image.into_iter().enumerate() {
            dx.index_axis_mut(Axis(0), i).assign(&dxi);
            dw_total += &dw;
            db_total += &db;
        }
        self.w.add_grad(&dw_total.into_dyn());
        self.b.add_grad(&db_total.into_dyn());
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
}

// ── BatchNorm ───────────────────────────────────────────────────────────────

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Shared batch-norm math over a [M, C] view (M samples per channel).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Param, // [C]
    pub beta: Param,  // [C]
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub channels: usize,
}

pub struct BnCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(ArrayD::from_elem(vec![channels], 1.0), false),
            beta: Param::new(ArrayD::zeros(vec![channels]), false),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            channels,
        }
    }

    /// Train-mode forward over an [M, C] matrix.
    pub fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, BnCache) {
        let m = x.nrows() as f64;
        let mut out = x.clone();
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let col = x.column(c);
            let mean = col.sum() / m;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
            let istd = 1.0 / (var + BN_EPS).sqrt();
            inv_std.push(istd);
            let g = self.gamma.value[[c]];
            let b = self.beta.value[[c]];
            for r in 0..x.nrows() {
                let xh = (x[(r, c)] - mean) * istd;
                xhat[(r, c)] = xh;
                out[(r, c)] = g * xh + b;
            }
            self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean;
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_var[c] =
                (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * unbiased;
        }
        (out, BnCache { xhat, inv_std })
    }

    /// Eval-mode forward using running statistics.
    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for c in 0..self.channels {
            let istd = 1.0 / (self.running_var[c] + BN_EPS).sqrt();
            let g = self.gamma.value[[c]];
            let b = self.beta.value[[c]];
            let mean = self.running_mean[c];
            for r in 0..x.nrows() {
                out[(r, c)] = g * (x[(r, c)] - mean) * istd + b;
            }
        }
        out
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Array2<f64>) -> Array2<f64> {
        let m = dy.nrows() as f64;
        let mut dx = dy.clone();
        let mut dgamma = Array1::<f64>::zeros(self.channels);
        let mut dbeta = Array1::<f64>::zeros(self.channels);
        for c in 0..self.channels {
            let g = self.gamma.value[[c]];
            let istd = cache.inv_std[c];
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for r in 0..dy.nrows() {
                sum_dy += dy[(r, c)];
                sum_dy_xhat += dy[(r, c)] * cache.xhat[(r, c)];
            }
            dgamma[c] = sum_dy_xhat;
            dbeta[c] = sum_dy;
            for r in 0..dy.nrows() {
                dx[(r, c)] = g * istd / m
                    * (m * dy[(r, c)] - sum_dy - cache.xhat[(r, c)] * sum_dy_xhat);
            }
        }
        self.gamma.add_grad(&dgamma.into_dyn());
        self.beta.add_grad(&dbeta.into_dyn());
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
}

/// Flatten (N, C, H, W) to the [N*H*W, C] sample-per-channel layout BatchNorm
/// expects, and back.
pub fn nchw_to_samples(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let mut out = Array2::zeros((n * h * w, c));
    for i in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(i * h * w + y * w + xx, ch)] = x[(i, ch, y, xx)];
                }
            }
        }
    }
    out
}

pub fn samples_to_nchw(x: &Array2<f64>, n: usize, c: usize, h: usize, w: usize) -> Array4<f64> {
    let mut out = Array4::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(i, ch, y, xx)] = x[(i * h * w + y * w + xx, ch)];
                }
            }
        }
    }
    out
}

// ── ReLU and pooling ────────────────────────────────────────────────────────

pub struct ReluCache {
    mask: ArrayD<bool>,
}

pub fn relu<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
) -> (ndarray::Array<f64, D>, ReluCache) {
    let mask = x.mapv(|v| v > 0.0).into_dyn();
    let y = x.mapv(|v| v.max(0.0));
    (y, ReluCache { mask })
}

pub fn relu_backward<D: ndarray::Dimension>(
    cache: &ReluCache,
    dy: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut dx = dy.clone();
    for (d, &m) in dx.iter_mut().zip(cache.mask.iter()) {
        if !m {
            *d = 0.0;
        }
    }
    dx
}

/// Global average pooling (N, C, H, W) -> (N, C).
pub fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let mut out = Array2::zeros((n, c));
    for i in 0..n {
        for ch in 0..c {
            let mut acc = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    acc += x[(i, ch, y, xx)];
                }
            }
            out[(i, ch)] = acc / (h * w) as f64;
        }
    }
    out
}

pub fn global_avg_pool_backward(dy: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (n, c) = dy.dim();
    let scale = 1.0 / (h * w) as f64;
    Array4::from_shape_fn((n, c, h, w), |(i, ch, _, _)| dy[(i, ch)] * scale)
}
