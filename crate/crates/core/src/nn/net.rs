//! Network assemblies: the tiny convolutional backbone and the MLP heads
//! used by the siamese trainers.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::image_ops::Image;
use crate::rng::RngStream;

use super::layers::{
    global_avg_pool, global_avg_pool_backward, nchw_to_samples, relu, relu_backward,
    samples_to_nchw, BatchNorm, BnCache, Conv2d, ConvCache, Linear, LinearCache, ReluCache,
};
use super::Param;

/// Stack a batch of HWC float images into an NCHW f64 batch.
pub fn images_to_batch(images: &[&Image]) -> Array4<f64> {
    let (h, w, _) = images[0].dim();
    let mut out = Array4::zeros((images.len(), 3, h, w));
    for (n, img) in images.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out[(n, c, y, x)] = img[(y, x, c)] as f64;
                }
            }
        }
    }
    out
}

// ── TinyConvNet ─────────────────────────────────────────────────────────────

/// Three stride-2 conv/BN/ReLU stages, global average pooling, and a linear
/// output layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TinyConvNet {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub conv3: Conv2d,
    pub bn3: BatchNorm,
    pub fc: Linear,
    pub out_dim: usize,
}

pub struct TinyConvCache {
    x_dims: Vec<(usize, usize, usize, usize)>, // post-conv dims per stage
    c1: ConvCache,
    b1: BnCache,
    r1: ReluCache,
    c2: ConvCache,
    b2: BnCache,
    r2: ReluCache,
    c3: ConvCache,
    b3: BnCache,
    r3: ReluCache,
    fc: LinearCache,
}

impl TinyConvNet {
    pub fn new(channels: (usize, usize, usize), out_dim: usize, rng: &mut RngStream) -> Self {
        let (c1, c2, c3) = channels;
        TinyConvNet {
            conv1: Conv2d::new(3, c1, 3, 2, 1, &mut rng.substream("conv1")),
            bn1: BatchNorm::new(c1),
            conv2: Conv2d::new(c1, c2, 3, 2, 1, &mut rng.substream("conv2")),
            bn2: BatchNorm::new(c2),
            conv3: Conv2d::new(c2, c3, 3, 2, 1, &mut rng.substream("conv3")),
            bn3: BatchNorm::new(c3),
            fc: Linear::new(c3, out_dim, &mut rng.substream("fc")),
            out_dim,
        }
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> (Array2<f64>, TinyConvCache) {
        let mut dims = Vec::with_capacity(3);

        let (y1, c1) = self.conv1.forward(x);
        dims.push(y1.dim());
        let (n, ch, h, w) = y1.dim();
        let (b1_out, b1) = self.bn1.forward_train(&nchw_to_samples(&y1));
        let (r1_out, r1) = relu(&samples_to_nchw(&b1_out, n, ch, h, w));

        let (y2, c2) = self.conv2.forward(&r1_out);
        dims.push(y2.dim());
        let (n, ch, h, w) = y2.dim();
        let (b2_out, b2) = self.bn2.forward_train(&nchw_to_samples(&y2));
        let (r2_out, r2) = relu(&samples_to_nchw(&b2_out, n, ch, h, w));

        let (y3, c3) = self.conv3.forward(&r2_out);
        dims.push(y3.dim());
        let (n, ch, h, w) = y3.dim();
        let (b3_out, b3) = self.bn3.forward_train(&nchw_to_samples(&y3));
        let (r3_out, r3) = relu(&samples_to_nchw(&b3_out, n, ch, h, w));

        let pooled = global_avg_pool(&r3_out);
        let (out, fc) = self.fc.forward(&pooled);
        (
            out,
            TinyConvCache {
                x_dims: dims,
                c1,
                b1,
                r1,
                c2,
                b2,
                r2,
                c3,
                b3,
                r3,
                fc,
            },
        )
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Array2<f64> {
        let (y1, _) = self.conv1.forward(x);
        let (n, ch, h, w) = y1.dim();
        let b1 = self.bn1.forward_eval(&nchw_to_samples(&y1));
        let (r1, _) = relu(&samples_to_nchw(&b1, n, ch, h, w));

        let (y2, _) = self.conv2.forward(&r1);
        let (n, ch, h, w) = y2.dim();
        let b2 = self.bn2.forward_eval(&nchw_to_samples(&y2));
        let (r2, _) = relu(&samples_to_nchw(&b2, n, ch, h, w));

        let (y3, _) = self.conv3.forward(&r2);
        let (n, ch, h, w) = y3.dim();
        let b3 = self.bn3.forward_eval(&nchw_to_samples(&y3));
        let (r3, _) = relu(&samples_to_nchw(&b3, n, ch, h, w));

        let pooled = global_avg_pool(&r3);
        let (out, _) = self.fc.forward(&pooled);
        out
    }

    pub fn backward(&mut self, cache: &TinyConvCache, dout: &Array2<f64>) {
        let d_pool = self.fc.backward(&cache.fc, dout);
        let (n, ch, h, w) = cache.x_dims[2];
        let d_r3 = global_avg_pool_backward(&d_pool, h, w);
        let d_b3 = relu_backward(&cache.r3, &d_r3);
        let d_y3 = self.bn3.backward(&cache.b3, &nchw_to_samples(&d_b3));
        let d_r2 = self.conv3.backward(&cache.c3, &samples_to_nchw(&d_y3, n, ch, h, w));

        let (n, ch, h, w) = cache.x_dims[1];
        let d_b2 = relu_backward(&cache.r2, &d_r2);
        let d_y2 = self.bn2.backward(&cache.b2, &nchw_to_samples(&d_b2));
        let d_r1 = self.conv2.backward(&cache.c2, &samples_to_nchw(&d_y2, n, ch, h, w));

        let (n, ch, h, w) = cache.x_dims[0];
        let d_b1 = relu_backward(&cache.r1, &d_r1);
        let d_y1 = self.bn1.backward(&cache.b1, &nchw_to_samples(&d_b1));
        let _ = self.conv1.backward(&cache.c1, &samples_to_nchw(&d_y1, n, ch, h, w));
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.conv1.params_mut();
        out.extend(self.bn1.params_mut());
        out.extend(self.conv2.params_mut());
        out.extend(self.bn2.params_mut());
        out.extend(self.conv3.params_mut());
        out.extend(self.bn3.params_mut());
        out.extend(self.fc.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.conv1.params();
        out.extend(self.bn1.params());
        out.extend(self.conv2.params());
        out.extend(self.bn2.params());
        out.extend(self.conv3.params());
        out.extend(self.bn3.params());
        out.extend(self.fc.params());
        out
    }
}

// ── MlpHead ─────────────────────────────────────────────────────────────────

/// Two-layer MLP: linear / BN / ReLU / linear, with an optional batch norm on
/// the output (projector convention).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpHead {
    pub fc1: Linear,
    pub bn1: BatchNorm,
    pub fc2: Linear,
    pub bn2: Option<BatchNorm>,
}

pub struct MlpCache {
    fc1: LinearCache,
    b1: BnCache,
    r1: ReluCache,
    fc2: LinearCache,
    b2: Option<BnCache>,
}

impl MlpHead {
    pub fn new(
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        final_bn: bool,
        rng: &mut RngStream,
    ) -> Self {
        MlpHead {
            fc1: Linear::new(in_dim, hidden, &mut rng.substream("fc1")),
            bn1: BatchNorm::new(hidden),
            fc2: Linear::new(hidden, out_dim, &mut rng.substream("fc2")),
            bn2: final_bn.then(|| BatchNorm::new(out_dim)),
        }
    }

    pub fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let (h, fc1) = self.fc1.forward(x);
        let (hb, b1) = self.bn1.forward_train(&h);
        let (hr, r1) = relu(&hb);
        let (out, fc2) = self.fc2.forward(&hr);
        match &mut self.bn2 {
            Some(bn) => {
                let (out_bn, b2) = bn.forward_train(&out);
                (
                    out_bn,
                    MlpCache {
                        fc1,
                        b1,
                        r1,
                        fc2,
                        b2: Some(b2),
                    },
                )
            }
            None => (
                out,
                MlpCache {
                    fc1,
                    b1,
                    r1,
                    fc2,
                    b2: None,
                },
            ),
        }
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let (h, _) = self.fc1.forward(x);
        let hb = self.bn1.forward_eval(&h);
        let (hr, _) = relu(&hb);
        let (out, _) = self.fc2.forward(&hr);
        match &self.bn2 {
            Some(bn) => bn.forward_eval(&out),
            None => out,
        }
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: &Array2<f64>) -> Array2<f64> {
        let d_out = match (&mut self.bn2, &cache.b2) {
            (Some(bn), Some(b2)) => bn.backward(b2, dy),
            _ => dy.clone(),
        };
        let d_hr = self.fc2.backward(&cache.fc2, &d_out);
        let d_hb = relu_backward(&cache.r1, &d_hr);
        let d_h = self.bn1.backward(&cache.b1, &d_hb);
        self.fc1.backward(&cache.fc1, &d_h)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.fc1.params_mut();
        out.extend(self.bn1.params_mut());
        out.extend(self.fc2.params_mut());
        if let Some(bn) = &mut self.bn2 {
            out.extend(bn.params_mut());
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.fc1.params();
        out.extend(self.bn1.params());
        out.extend(self.fc2.params());
        if let Some(bn) = &self.bn2 {
            out.extend(bn.params());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_conv_shapes() {
        let mut rng = RngStream::new("net-test", 0);
        let mut net = TinyConvNet::new((4, 8, 16), 32, &mut rng);
        let x = Array4::from_shape_fn((3, 3, 16, 16), |(n, c, y, xx)| {
            ((n + c + y + xx) as f64 * 0.1).sin()
        });
        let (out, cache) = net.forward_train(&x);
        assert_eq!(out.dim(), (3, 32));
        net.backward(&cache, &Array2::from_elem((3, 32), 1.0));
        for p in net.params() {
            assert!(p.grad.is_some());
        }
    }

    #[test]
    fn eval_mode_is_deterministic_and_batch_independent() {
        let mut rng = RngStream::new("net-test", 1);
        let mut net = TinyConvNet::new((4, 8, 16), 8, &mut rng);
        let x = Array4::from_shape_fn((4, 3, 16, 16), |(n, c, y, xx)| {
            ((n * 13 + c * 7 + y + xx) as f64 * 0.05).cos()
        });
        // populate running stats
        net.forward_train(&x);
        let full = net.forward_eval(&x);
        // a single-image batch must give the same row
        let single = net.forward_eval(&x.slice(ndarray::s![0..1, .., .., ..]).to_owned());
        for j in 0..8 {
            assert!((full[(0, j)] - single[(0, j)]).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_head_backward_matches_finite_differences() {
        let mut rng = RngStream::new("mlp-test", 0);
        let head = MlpHead::new(4, 6, 3, true, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let probe = Array2::from_shape_fn((5, 3), |(i, j)| ((i + j) as f64 * 0.19).cos());

        let mut head_grad = head.clone();
        let (_, cache) = head_grad.forward_train(&x);
        let dx = head_grad.backward(&cache, &probe);

        let h = 1e-5;
        for i in 0..5 {
            for j in 0..4 {
                let mut plus = x.clone();
                plus[(i, j)] += h;
                let mut minus = x.clone();
                minus[(i, j)] -= h;
                let mut h1 = head.clone();
                let mut h2 = head.clone();
                let up = (h1.forward_train(&plus).0 * &probe).sum();
                let down = (h2.forward_train(&minus).0 * &probe).sum();
                let fd = (up - down) / (2.0 * h);
                assert!(
                    (fd - dx[(i, j)]).abs() < 1e-5 * (1.0 + fd.abs()),
                    "fd {fd} vs {:.12}",
                    dx[(i, j)]
                );
            }
        }
    }
}
