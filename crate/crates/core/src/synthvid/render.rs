//! Rasterization and blur kernels on single-channel `H×W` buffers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{FrameConditions, SceneSpec, SequenceSample, Track};
use crate::geometry::{BBox, GroundTruthBox};
use crate::tensor::Tensor;

/// Exact area coverage of each pixel `[x, x+1)×[y, y+1)` by `b`.
pub fn rect_coverage(b: &BBox, width: usize, height: usize) -> Vec<f32> {
    let (x0, y0, x1, y1) = b.corners();
    let overlap = |lo: f64, hi: f64, i: usize| (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
    let cols: Vec<f64> = (0..width).map(|i| overlap(x0, x1, i)).collect();
    let mut out = vec![0.0f32; width * height];
    for y in 0..height {
        let ry = overlap(y0, y1, y);
        if ry == 0.0 {
            continue;
        }
        for x in 0..width {
            out[y * width + x] = (ry * cols[x]) as f32;
        }
    }
    out
}

fn bilinear(img: &[f32], width: usize, height: usize, x: f64, y: f64) -> f32 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ax, ay) = ((x - fx) as f32, (y - fy) as f32);
    let at = |xi: f64, yi: f64| -> f32 {
        if xi < 0.0 || yi < 0.0 || xi >= width as f64 || yi >= height as f64 {
            0.0
        } else {
            img[yi as usize * width + xi as usize]
        }
    };
    (1.0 - ax) * (1.0 - ay) * at(fx, fy)
        + ax * (1.0 - ay) * at(fx + 1.0, fy)
        + (1.0 - ax) * ay * at(fx, fy + 1.0)
        + ax * ay * at(fx + 1.0, fy + 1.0)
}

/// Averages `img` over a centered segment of `length` pixels along
/// `direction`. Weights sum to one, so interior mass is conserved.
pub fn line_blur(img: &[f32], width: usize, height: usize, direction: (f64, f64), length: f64) -> Vec<f32> {
    let norm = direction.0.hypot(direction.1);
    if length < 1e-3 || norm == 0.0 {
        return img.to_vec();
    }
    let (ux, uy) = (direction.0 / norm, direction.1 / norm);
    let n = 2 * length.ceil() as usize + 1;
    let w = 1.0 / n as f32;
    let mut out = vec![0.0f32; img.len()];
    for j in 0..n {
        let s = (j as f64 / (n - 1) as f64 - 0.5) * length;
        let (dx, dy) = (s * ux, s * uy);
        for y in 0..height {
            for x in 0..width {
                out[y * width + x] += w * bilinear(img, width, height, x as f64 - dx, y as f64 - dy);
            }
        }
    }
    out
}

/// Normalized disk kernel of the given radius, `(2⌈r⌉+1)²` taps, weights
/// from 4×4 supersampling.
pub fn defocus_kernel(radius: f64) -> (usize, Vec<f32>) {
    let half = radius.ceil() as usize;
    let size = 2 * half + 1;
    let mut k = vec![0.0f32; size * size];
    for ky in 0..size {
        for kx in 0..size {
            let mut hits = 0;
            for sy in 0..4 {
                for sx in 0..4 {
                    let dx = kx as f64 - half as f64 + (sx as f64 + 0.5) / 4.0 - 0.5;
                    let dy = ky as f64 - half as f64 + (sy as f64 + 0.5) / 4.0 - 0.5;
                    if dx * dx + dy * dy <= radius * radius {
                        hits += 1;
                    }
                }
            }
            k[ky * size + kx] = hits as f32;
        }
    }
    let total: f32 = k.iter().sum();
    if total == 0.0 {
        k[half * size + half] = 1.0;
    } else {
        k.iter_mut().for_each(|v| *v /= total);
    }
    (size, k)
}

/// Disk blur with edge clamping.
pub fn disk_blur(img: &[f32], width: usize, height: usize, radius: f64) -> Vec<f32> {
    if radius < 0.05 {
        return img.to_vec();
    }
    let (size, k) = defocus_kernel(radius);
    let half = (size / 2) as isize;
    let mut out = vec![0.0f32; img.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut acc = 0.0;
            for ky in 0..size as isize {
                let sy = (y + ky - half).clamp(0, height as isize - 1) as usize;
                for kx in 0..size as isize {
                    let sx = (x + kx - half).clamp(0, width as isize - 1) as usize;
                    acc += k[(ky * size as isize + kx) as usize] * img[sy * width + sx];
                }
            }
            out[y as usize * width + x as usize] = acc;
        }
    }
    out
}

/// Smooth background: per-sequence tint, linear gradient and a static
/// fine texture.
fn background(spec: &SceneSpec, rng: &mut impl Rng) -> Vec<f32> {
    let (w, h) = (spec.width, spec.height);
    let mut bg = vec![0.0f32; 3 * w * h];
    let tint: Vec<f64> = (0..3).map(|_| super::MID_GREY + rng.gen_range(-0.05..0.05)).collect();
    let (gx, gy) = (rng.gen_range(-0.06..0.06), rng.gen_range(-0.06..0.06));
    let texture: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-0.04..0.04)).collect();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let ramp = gx * (x as f64 / w as f64 - 0.5) + gy * (y as f64 / h as f64 - 0.5);
                bg[(c * h + y) * w + x] = (tint[c] + ramp + texture[y * w + x]) as f32;
            }
        }
    }
    bg
}

pub(super) fn render_sequence(
    spec: &SceneSpec,
    tracks: &[Track],
    conditions: &[FrameConditions],
    rng: &mut impl Rng,
) -> SequenceSample {
    let (w, h) = (spec.width, spec.height);
    let plane = w * h;
    let bg = background(spec, rng);
    let noise = (spec.noise > 0.0).then(|| Normal::new(0.0, spec.noise).expect("finite positive sigma"));
    let mut data = Vec::with_capacity(spec.frames * 3 * plane);
    let mut boxes = Vec::with_capacity(spec.frames);
    for (t, cond) in conditions.iter().enumerate() {
        let mut img = bg.clone();
        let mut gts = Vec::with_capacity(tracks.len());
        for tr in tracks {
            let b = tr.bbox(t);
            let mut alpha = rect_coverage(&b, w, h);
            alpha = line_blur(&alpha, w, h, tr.velocity, cond.blur_factor * tr.speed());
            for c in 0..3 {
                let col = tr.color[c];
                for (p, &a) in img[c * plane..(c + 1) * plane].iter_mut().zip(&alpha) {
                    *p = *p * (1.0 - a) + col * a;
                }
            }
            gts.push(GroundTruthBox {
                bbox: b,
                class_id: tr.class_id,
            });
        }
        if cond.defocus_radius >= 0.05 {
            for c in 0..3 {
                let blurred = disk_blur(&img[c * plane..(c + 1) * plane], w, h, cond.defocus_radius);
                img[c * plane..(c + 1) * plane].copy_from_slice(&blurred);
            }
        }
        let scale = spec.brightness as f32;
        for p in img.iter_mut() {
            let n = noise.map(|d| d.sample(rng) as f32).unwrap_or(0.0);
            *p = (*p * scale + n).clamp(0.0, 1.0);
        }
        data.extend_from_slice(&img);
        boxes.push(gts);
    }
    SequenceSample {
        id: 0,
        frames: Tensor::new(vec![spec.frames, 3, h, w], data).expect("sized above"),
        boxes,
        scenario: spec.scenario,
        seed: spec.seed,
    }
}
