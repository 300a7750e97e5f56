//! Photometric perturbations. All outputs are clamped to `[0, 1]`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::{Image, CHANNELS};

/// Jitter strengths; each factor is drawn from `[max(0, 1 - s), 1 + s]`
/// (hue: a shift in `[-s, s]` turns of the color wheel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
}

impl ColorJitter {
    pub const NONE: ColorJitter = ColorJitter {
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };
}

impl Default for ColorJitter {
    fn default() -> Self {
        Self {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
        }
    }
}

#[inline]
fn luma(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn factor<R: Rng + ?Sized>(strength: f32, rng: &mut R) -> Option<f32> {
    (strength > 0.0).then(|| rng.random_range((1.0 - strength).max(0.0)..=1.0 + strength))
}

/// Brightness, contrast, saturation and hue adjustments in random order.
pub fn color_jitter<R: Rng + ?Sized>(image: &mut Image, jitter: &ColorJitter, rng: &mut R) {
    let mut order = [0u8, 1, 2, 3];
    order.shuffle(rng);
    for op in order {
        match op {
            0 => {
                if let Some(f) = factor(jitter.brightness, rng) {
                    for v in image.data_mut() {
                        *v = (*v * f).clamp(0.0, 1.0);
                    }
                }
            }
            1 => {
                if let Some(f) = factor(jitter.contrast, rng) {
                    let data = image.data_mut();
                    let n = data.len() / CHANNELS;
                    let mean = data.chunks(CHANNELS).map(luma).sum::<f32>() / n as f32;
                    for v in data.iter_mut() {
                        *v = (mean + f * (*v - mean)).clamp(0.0, 1.0);
                    }
                }
            }
            2 => {
                if let Some(f) = factor(jitter.saturation, rng) {
                    for p in image.data_mut().chunks_mut(CHANNELS) {
                        let g = luma(p);
                        for v in p.iter_mut() {
                            *v = (g + f * (*v - g)).clamp(0.0, 1.0);
                        }
                    }
                }
            }
            _ => {
                if jitter.hue > 0.0 {
                    let shift = rng.random_range(-jitter.hue..=jitter.hue);
                    for p in image.data_mut().chunks_mut(CHANNELS) {
                        let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
                        let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
                        p[0] = r.clamp(0.0, 1.0);
                        p[1] = g.clamp(0.0, 1.0);
                        p[2] = b.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
}

pub fn grayscale(image: &mut Image) {
    for p in image.data_mut().chunks_mut(CHANNELS) {
        let g = luma(p).clamp(0.0, 1.0);
        p.fill(g);
    }
}

/// Separable Gaussian blur with edge clamping and a `ceil(3 sigma)` radius.
pub fn gaussian_blur(image: &Image, sigma: f32) -> Image {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h) = (image.width() as i64, image.height() as i64);
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; CHANNELS];
                for (ki, k) in kernel.iter().enumerate() {
                    let off = ki as i64 - radius;
                    let (sx, sy) = if horizontal {
                        ((x + off).clamp(0, w - 1), y)
                    } else {
                        (x, (y + off).clamp(0, h - 1))
                    };
                    let s = ((sy * w + sx) as usize) * CHANNELS;
                    for c in 0..CHANNELS {
                        acc[c] += k * src[s + c];
                    }
                }
                let d = ((y * w + x) as usize) * CHANNELS;
                out[d..d + CHANNELS].copy_from_slice(&acc);
            }
        }
        out
    };
    let tmp = pass(image.data(), true);
    let mut out = pass(&tmp, false);
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Image::new(image.width(), image.height(), out).expect("same shape")
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}
