//! Stack-consistent augmentation: one crop, flip and HSV draw per stack.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, GroundTruthBox};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip: bool,
    pub crop: bool,
    /// Largest fraction of each side removed by a crop.
    pub max_crop: f64,
    pub hsv: bool,
    /// Value is scaled by a log-uniform factor in `[1/exposure, exposure]`.
    pub exposure: f64,
    pub saturation: f64,
    /// Boxes narrower or shorter than this after cropping are dropped (px).
    pub min_box: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            crop: true,
            max_crop: 0.2,
            hsv: true,
            exposure: 1.5,
            saturation: 1.5,
            min_box: 2.0,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            flip: false,
            crop: false,
            hsv: false,
            ..Self::default()
        }
    }

    pub fn flip_only() -> Self {
        Self {
            flip: true,
            ..Self::none()
        }
    }
}

/// One concrete draw of the augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// `(x0, y0, w, h)` source window in pixels, resized to the full frame.
    pub crop: Option<(f64, f64, f64, f64)>,
    pub exposure: f64,
    pub saturation: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            flip: false,
            crop: None,
            exposure: 1.0,
            saturation: 1.0,
        }
    }
}

fn log_uniform(rng: &mut impl Rng, max: f64) -> f64 {
    if max <= 1.0 {
        1.0
    } else {
        rng.gen_range(-max.ln()..=max.ln()).exp()
    }
}

pub fn sample_params(cfg: &AugmentConfig, width: usize, height: usize, rng: &mut impl Rng) -> AugmentParams {
    let mut p = AugmentParams::identity();
    if cfg.crop && cfg.max_crop > 0.0 {
        let (w, h) = (width as f64, height as f64);
        let cw = w * (1.0 - rng.gen_range(0.0..=cfg.max_crop));
        let ch = h * (1.0 - rng.gen_range(0.0..=cfg.max_crop));
        p.crop = Some((rng.gen_range(0.0..=w - cw), rng.gen_range(0.0..=h - ch), cw, ch));
    }
    if cfg.flip {
        p.flip = rng.gen_bool(0.5);
    }
    if cfg.hsv {
        p.exposure = log_uniform(rng, cfg.exposure);
        p.saturation = log_uniform(rng, cfg.saturation);
    }
    p
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

fn bilinear_clamped(plane: &[f32], w: usize, h: usize, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
    (1.0 - ax) * (1.0 - ay) * plane[y0 * w + x0]
        + ax * (1.0 - ay) * plane[y0 * w + x1]
        + (1.0 - ax) * ay * plane[y1 * w + x0]
        + ax * ay * plane[y1 * w + x1]
}

/// Applies `p` to every frame of `[T, 3, H, W]` and maps the boxes.
pub fn apply_augment(frames: &Tensor<f32>, boxes: &[GroundTruthBox], p: &AugmentParams, min_box: f64) -> (Tensor<f32>, Vec<GroundTruthBox>) {
    let s = frames.shape();
    let (t, h, w) = (s[0], s[2], s[3]);
    let plane = h * w;
    let (fw, fh) = (w as f64, h as f64);
    let mut out = frames.clone();
    let mut gts: Vec<GroundTruthBox> = boxes.to_vec();

    if let Some((x0, y0, cw, ch)) = p.crop {
        let (sx, sy) = (cw / fw, ch / fh);
        let src = frames.data();
        let dst = out.data_mut();
        for k in 0..t * 3 {
            let from = &src[k * plane..(k + 1) * plane];
            for y in 0..h {
                let yy = y0 + (y as f64 + 0.5) * sy - 0.5;
                for x in 0..w {
                    let xx = x0 + (x as f64 + 0.5) * sx - 0.5;
                    dst[k * plane + y * w + x] = bilinear_clamped(from, w, h, xx, yy);
                }
            }
        }
        gts = gts
            .into_iter()
            .filter_map(|g| {
                let (a, b, c, d) = g.bbox.corners();
                let map_x = |v: f64| ((v - x0) / sx).clamp(0.0, fw);
                let map_y = |v: f64| ((v - y0) / sy).clamp(0.0, fh);
                let nb = BBox::from_corners(map_x(a), map_y(b), map_x(c), map_y(d));
                (nb.w >= min_box && nb.h >= min_box).then_some(GroundTruthBox { bbox: nb, ..g })
            })
            .collect();
    }

    if p.flip {
        for row in out.data_mut().chunks_exact_mut(w) {
            row.reverse();
        }
        for g in gts.iter_mut() {
            g.bbox.cx = fw - g.bbox.cx;
        }
    }

    if p.exposure != 1.0 || p.saturation != 1.0 {
        let (e, sat) = (p.exposure as f32, p.saturation as f32);
        let data = out.data_mut();
        for f in 0..t {
            let base = f * 3 * plane;
            for i in 0..plane {
                let (r, g, b) = (data[base + i], data[base + plane + i], data[base + 2 * plane + i]);
                let (hh, ss, vv) = rgb_to_hsv(r, g, b);
                let (r, g, b) = hsv_to_rgb(hh, (ss * sat).clamp(0.0, 1.0), (vv * e).clamp(0.0, 1.0));
                data[base + i] = r;
                data[base + plane + i] = g;
                data[base + 2 * plane + i] = b;
            }
        }
    }
    (out, gts)
}

/// Draws one parameter set and applies it to the whole stack.
pub fn augment(
    frames: &Tensor<f32>,
    boxes: &[GroundTruthBox],
    rng: &mut impl Rng,
    cfg: &AugmentConfig,
) -> (Tensor<f32>, Vec<GroundTruthBox>) {
    let s = frames.shape();
    let p = sample_params(cfg, s[3], s[2], rng);
    apply_augment(frames, boxes, &p, cfg.min_box)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2f32, 0.5f32, 0.9f32), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-6 && (g - g2).abs() < 1e-6 && (b - b2).abs() < 1e-6);
        }
    }

    #[test]
    fn crop_drops_boxes_cut_to_slivers() {
        let frames = Tensor::zeros(vec![3, 3, 32, 32]);
        let gts = vec![
            GroundTruthBox::new(1.5, 16.0, 3.0, 6.0, 0),
            GroundTruthBox::new(16.0, 16.0, 8.0, 8.0, 0),
        ];
        let p = AugmentParams {
            crop: Some((2.0, 0.0, 30.0, 32.0)),
            ..AugmentParams::identity()
        };
        let (_, out) = apply_augment(&frames, &gts, &p, 2.0);
        assert_eq!(out.len(), 1);
        assert!((out[0].bbox.cx - 14.0 * 32.0 / 30.0).abs() < 1e-9);
    }
}
