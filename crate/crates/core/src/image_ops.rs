//! Pixel-level primitives shared by the synthetic renderer and the
//! augmentation pipeline.
//!
//! Images are `(H, W, 3)` float arrays with values in `[0, 1]`.

use ndarray::Array3;

use crate::error::{Error, Result};

/// H x W x 3 image with values in [0, 1].
pub type Image = Array3<f32>;

/// Check the pixel invariants: three channels, positive size, values in [0, 1].
pub fn validate_pixels(img: &Image) -> Result<()> {
    let (h, w, c) = img.dim();
    if h == 0 || w == 0 || c != 3 {
        return Err(Error::CorruptData {
            path: "<in-memory image>".into(),
            detail: format!("bad image shape {h}x{w}x{c}"),
        });
    }
    for &v in img.iter() {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(Error::CorruptData {
                path: "<in-memory image>".into(),
                detail: format!("pixel value {v} outside [0, 1]"),
            });
        }
    }
    Ok(())
}

pub fn clamp01(img: &mut Image) {
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
}

/// Content hash of an image's exact bit pattern; distinct pixels give
/// distinct digests for all practical purposes.
pub fn image_digest(img: &Image) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for &v in img.iter() {
        hasher.update(v.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Bilinear resize to `out_h` x `out_w`. Same-size calls return a copy.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Image {
    let (h, w, _) = img.dim();
    if h == out_h && w == out_w {
        return img.clone();
    }
    let mut out = Array3::zeros((out_h, out_w, 3));
    // align_corners=false convention: sample at pixel centers
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            for c in 0..3 {
                let top = img[(y0, x0, c)] * (1.0 - wx) + img[(y0, x1, c)] * wx;
                let bot = img[(y1, x0, c)] * (1.0 - wx) + img[(y1, x1, c)] * wx;
                out[(oy, ox, c)] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

/// Crop the box at (top, left) with the given size. Caller guarantees bounds.
pub fn crop(img: &Image, top: usize, left: usize, height: usize, width: usize) -> Image {
    img.slice(ndarray::s![top..top + height, left..left + width, ..])
        .to_owned()
}

pub fn flip_horizontal(img: &Image) -> Image {
    let (h, w, _) = img.dim();
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[(y, x, c)] = img[(y, w - 1 - x, c)];
            }
        }
    }
    out
}

/// ITU-R 601 luma.
pub fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn to_grayscale(img: &Image) -> Image {
    let mut out = img.clone();
    let (h, w, _) = img.dim();
    for y in 0..h {
        for x in 0..w {
            let l = luma(img[(y, x, 0)], img[(y, x, 1)], img[(y, x, 2)]);
            for c in 0..3 {
                out[(y, x, c)] = l;
            }
        }
    }
    out
}

/// Scale brightness by `factor` and clamp.
pub fn adjust_brightness(img: &mut Image, factor: f32) {
    img.mapv_inplace(|v| (v * factor).clamp(0.0, 1.0));
}

/// Blend toward the mean gray level: `out = factor*img + (1-factor)*mean`.
pub fn adjust_contrast(img: &mut Image, factor: f32) {
    let (h, w, _) = img.dim();
    let mut mean = 0.0f32;
    for y in 0..h {
        for x in 0..w {
            mean += luma(img[(y, x, 0)], img[(y, x, 1)], img[(y, x, 2)]);
        }
    }
    mean /= (h * w) as f32;
    img.mapv_inplace(|v| (factor * v + (1.0 - factor) * mean).clamp(0.0, 1.0));
}

/// Blend toward the per-pixel gray value.
pub fn adjust_saturation(img: &mut Image, factor: f32) {
    let (h, w, _) = img.dim();
    for y in 0..h {
        for x in 0..w {
            let l = luma(img[(y, x, 0)], img[(y, x, 1)], img[(y, x, 2)]);
            for c in 0..3 {
                let v = factor * img[(y, x, c)] + (1.0 - factor) * l;
                img[(y, x, c)] = v.clamp(0.0, 1.0);
            }
        }
    }
}

/// Shift hue by `shift` full turns (wrapping).
pub fn adjust_hue(img: &mut Image, shift: f32) {
    let (h, w, _) = img.dim();
    for y in 0..h {
        for x in 0..w {
            let (hh, s, v) = rgb_to_hsv(img[(y, x, 0)], img[(y, x, 1)], img[(y, x, 2)]);
            let (r, g, b) = hsv_to_rgb((hh + shift).rem_euclid(1.0), s, v);
            img[(y, x, 0)] = r;
            img[(y, x, 1)] = g;
            img[(y, x, 2)] = b;
        }
    }
}

/// RGB in [0,1] to (hue, saturation, value), hue in [0,1) turns.
pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Separable Gaussian blur with standard deviation `sigma`, kernel truncated
/// at two standard deviations. Edges are handled by renormalizing over the
/// in-bounds taps.
pub fn gaussian_blur(img: &Image, sigma: f32) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (2.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        let x = i as f32;
        kernel.push((-0.5 * (x / sigma).powi(2)).exp());
    }
    let (h, w, _) = img.dim();
    let mut tmp: Image = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                let mut norm = 0.0;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let xx = x as isize + ki as isize - radius;
                    if xx >= 0 && (xx as usize) < w {
                        acc += kv * img[(y, xx as usize, c)];
                        norm += kv;
                    }
                }
                tmp[(y, x, c)] = acc / norm;
            }
        }
    }
    let mut out: Image = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                let mut norm = 0.0;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let yy = y as isize + ki as isize - radius;
                    if yy >= 0 && (yy as usize) < h {
                        acc += kv * tmp[(yy as usize, x, c)];
                        norm += kv;
                    }
                }
                out[(y, x, c)] = acc / norm;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            ((y * w + x) as f32 / (h * w) as f32 + c as f32 * 0.01).min(1.0)
        })
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = ramp(8, 8);
        let out = resize_bilinear(&img, 8, 8);
        assert_eq!(img, out);
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[
            (0.0, 0.0, 0.0),
            (1.0, 1.0, 1.0),
            (0.8, 0.2, 0.1),
            (0.1, 0.9, 0.5),
            (0.3, 0.3, 0.9),
        ] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-5, "{r} vs {r2}");
            assert!((g - g2).abs() < 1e-5);
            assert!((b - b2).abs() < 1e-5);
        }
    }

    #[test]
    fn grayscale_flattens_channels() {
        let g = to_grayscale(&ramp(4, 4));
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(g[(y, x, 0)], g[(y, x, 1)]);
                assert_eq!(g[(y, x, 1)], g[(y, x, 2)]);
            }
        }
    }

    #[test]
    fn blur_preserves_constant_image() {
        let img = Array3::from_elem((6, 6, 3), 0.42f32);
        let out = gaussian_blur(&img, 1.5);
        for &v in out.iter() {
            assert!((v - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let mut img = ramp(4, 4);
        img[(0, 0, 0)] = 1.5;
        assert!(validate_pixels(&img).is_err());
    }
}
