//! Deterministic synthetic video: moving rectangles over a static textured
//! background, with motion blur, defocus, darkening and sensor noise.
//!
//! Degradations are drawn independently per frame (exposure length, defocus
//! radius, noise), so a neighbouring frame often carries a cleaner view of
//! the same object. That is the situation temporal fusion is meant to
//! exploit.
//!
//! Ground truth is always the unblurred rectangle.

mod io;
mod render;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, GroundTruthBox};
use crate::tensor::Tensor;

pub use io::{export_dataset, load_dataset, load_frames, read_annotations, read_ppm, write_ppm, FrameAnnotation, Manifest, SequenceEntry};
pub use render::{defocus_kernel, disk_blur, line_blur, rect_coverage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Clean,
    Blur,
    Defocus,
    Dark,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Clean, Scenario::Blur, Scenario::Defocus, Scenario::Dark];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Clean => "clean",
            Scenario::Blur => "blur",
            Scenario::Defocus => "defocus",
            Scenario::Dark => "dark",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Generation parameters of one sequence. Ranges are inclusive `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub objects: [usize; 2],
    /// Pixels per frame.
    pub speed: [f64; 2],
    /// Rectangle side lengths in pixels, drawn independently for w and h.
    pub size: [f64; 2],
    /// Per-frame motion blur length as a multiple of the speed.
    pub blur_factor: [f64; 2],
    /// Per-frame disk defocus radius in pixels; 0 disables it.
    pub defocus_radius: [f64; 2],
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    /// Global intensity multiplier.
    pub brightness: f64,
    /// Object intensity offset from mid-grey, signed by class.
    pub contrast: [f64; 2],
    /// Per-frame uniform position jitter bound in pixels.
    pub jitter: f64,
    /// 1, or 2 for light/dark rectangle classes.
    pub classes: usize,
    pub scenario: Scenario,
    pub seed: u64,
}

impl SceneSpec {
    pub fn for_scenario(scenario: Scenario, seed: u64) -> Self {
        let base = Self {
            width: 64,
            height: 64,
            frames: 21,
            objects: [1, 3],
            speed: [0.3, 1.2],
            size: [8.0, 18.0],
            blur_factor: [1.0, 1.0],
            defocus_radius: [0.0, 0.0],
            noise: 0.06,
            brightness: 1.0,
            contrast: [0.06, 0.2],
            jitter: 0.3,
            classes: 1,
            scenario,
            seed,
        };
        match scenario {
            Scenario::Clean => base,
            Scenario::Blur => Self {
                blur_factor: [1.0, 20.0],
                ..base
            },
            Scenario::Defocus => Self {
                defocus_radius: [1.5, 4.5],
                ..base
            },
            Scenario::Dark => Self {
                blur_factor: [1.0, 2.0],
                brightness: 0.25,
                noise: 0.06,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(format!("scene spec: {m}")));
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0].is_finite() && r[1].is_finite();
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return err("frame extents and count must be positive".into());
        }
        if self.objects[0] > self.objects[1] {
            return err(format!("object count range {:?} is reversed", self.objects));
        }
        if !ordered(self.speed) || self.speed[0] < 0.0 {
            return err(format!("speed range {:?} must be ordered and non-negative", self.speed));
        }
        if !ordered(self.size) || self.size[0] <= 0.0 {
            return err(format!("size range {:?} must be ordered and positive", self.size));
        }
        if !ordered(self.blur_factor) || self.blur_factor[0] < 0.0 {
            return err(format!("blur factor range {:?} must be ordered and non-negative", self.blur_factor));
        }
        if !ordered(self.contrast) || self.contrast[0] < 0.0 || self.contrast[1] * 1.2 > MID_GREY {
            return err(format!("contrast range {:?} must be ordered and within [0, {MID_GREY}/1.2]", self.contrast));
        }
        if !ordered(self.defocus_radius) || self.defocus_radius[0] < 0.0 {
            return err(format!("defocus range {:?} must be ordered and non-negative", self.defocus_radius));
        }
        if !(self.noise >= 0.0 && self.jitter >= 0.0 && self.brightness > 0.0 && self.brightness <= 1.0) {
            return err("noise and jitter must be non-negative and brightness in (0, 1]".into());
        }
        if !(1..=2).contains(&self.classes) {
            return err(format!("classes must be 1 or 2, got {}", self.classes));
        }
        // Worst case: fastest, largest object moving along the shorter axis.
        let travel = (self.frames - 1) as f64 * self.speed[1] + self.size[1] + 2.0 * self.jitter;
        let room = self.width.min(self.height) as f64;
        if travel > room {
            return err(format!(
                "a {}px object at {} px/frame needs {travel:.1}px over {} frames but the frame is {room}px",
                self.size[1], self.speed[1], self.frames
            ));
        }
        Ok(())
    }
}

/// Trajectory and appearance of one rectangle.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub class_id: usize,
    pub color: [f32; 3],
    pub w: f64,
    pub h: f64,
    /// Center at frame 0, before jitter.
    pub start: (f64, f64),
    pub velocity: (f64, f64),
    /// Per-frame center offset.
    pub jitter: Vec<(f64, f64)>,
}

impl Track {
    pub fn center(&self, frame: usize) -> (f64, f64) {
        let (jx, jy) = self.jitter.get(frame).copied().unwrap_or((0.0, 0.0));
        let t = frame as f64;
        (self.start.0 + self.velocity.0 * t + jx, self.start.1 + self.velocity.1 * t + jy)
    }

    pub fn bbox(&self, frame: usize) -> BBox {
        let (cx, cy) = self.center(frame);
        BBox::new(cx, cy, self.w, self.h)
    }

    pub fn speed(&self) -> f64 {
        self.velocity.0.hypot(self.velocity.1)
    }
}

/// Per-frame imaging conditions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameConditions {
    pub blur_factor: f64,
    pub defocus_radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub id: usize,
    /// `[T, 3, H, W]` in `[0, 1]`.
    pub frames: Tensor<f32>,
    pub boxes: Vec<Vec<GroundTruthBox>>,
    pub scenario: Scenario,
    pub seed: u64,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    /// `[3, H, W]` slice of frame `t`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = 3 * self.height() * self.width();
        &self.frames.data()[t * n..(t + 1) * n]
    }
}

/// Mean background level.
pub const MID_GREY: f64 = 0.45;

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

fn overlaps(a: &Track, b: &Track, frames: usize) -> bool {
    (0..frames).any(|t| {
        let (p, q) = (a.bbox(t), b.bbox(t));
        (p.cx - q.cx).abs() < 0.5 * (p.w + q.w) + 1.0 && (p.cy - q.cy).abs() < 0.5 * (p.h + q.h) + 1.0
    })
}

/// Samples non-overlapping tracks that stay fully inside the frame. Objects
/// that cannot be placed without overlap after a bounded number of attempts
/// are left out.
pub fn sample_tracks(spec: &SceneSpec, rng: &mut impl Rng) -> Vec<Track> {
    let count = rng.gen_range(spec.objects[0]..=spec.objects[1]);
    let (fw, fh) = (spec.width as f64, spec.height as f64);
    let last = (spec.frames - 1) as f64;
    let mut tracks: Vec<Track> = Vec::with_capacity(count);
    for _ in 0..count {
        for _attempt in 0..50 {
            let class_id = if spec.classes == 2 { rng.gen_range(0..2) } else { 0 };
            let dark = if spec.classes == 2 { class_id == 1 } else { rng.gen_bool(0.5) };
            let offset = uniform(rng, spec.contrast) * if dark { -1.0 } else { 1.0 };
            let color: [f64; 3] = std::array::from_fn(|_| MID_GREY + offset * rng.gen_range(0.8..=1.2));
            let w = uniform(rng, spec.size);
            let h = uniform(rng, spec.size);
            let speed = uniform(rng, spec.speed);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let velocity = (speed * angle.cos(), speed * angle.sin());
            // Start range keeping every jittered position inside the frame.
            let span = |extent: f64, size: f64, v: f64| -> (f64, f64) {
                let lo = 0.5 * size + spec.jitter - (v * last).min(0.0);
                let hi = extent - 0.5 * size - spec.jitter - (v * last).max(0.0);
                (lo, hi)
            };
            let (x0, x1) = span(fw, w, velocity.0);
            let (y0, y1) = span(fh, h, velocity.1);
            let start = (
                if x1 > x0 { rng.gen_range(x0..=x1) } else { 0.5 * (x0 + x1) },
                if y1 > y0 { rng.gen_range(y0..=y1) } else { 0.5 * (y0 + y1) },
            );
            let jitter = (0..spec.frames)
                .map(|_| {
                    if spec.jitter > 0.0 {
                        (rng.gen_range(-spec.jitter..=spec.jitter), rng.gen_range(-spec.jitter..=spec.jitter))
                    } else {
                        (0.0, 0.0)
                    }
                })
                .collect();
            let track = Track {
                class_id,
                color: color.map(|c| c as f32),
                w,
                h,
                start,
                velocity,
                jitter,
            };
            if !tracks.iter().any(|t| overlaps(t, &track, spec.frames)) {
                tracks.push(track);
                break;
            }
        }
    }
    tracks
}

pub fn sample_conditions(spec: &SceneSpec, rng: &mut impl Rng) -> Vec<FrameConditions> {
    (0..spec.frames)
        .map(|_| FrameConditions {
            blur_factor: uniform(rng, spec.blur_factor),
            defocus_radius: uniform(rng, spec.defocus_radius),
        })
        .collect()
}

pub fn generate_sequence(spec: &SceneSpec) -> Result<SequenceSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tracks = sample_tracks(spec, &mut rng);
    let conditions = sample_conditions(spec, &mut rng);
    Ok(render::render_sequence(spec, &tracks, &conditions, &mut rng))
}

/// Renders explicit tracks under explicit per-frame conditions. Noise is
/// drawn from `seed`.
pub fn render_tracks(spec: &SceneSpec, tracks: &[Track], conditions: &[FrameConditions]) -> Result<SequenceSample> {
    spec.validate()?;
    if conditions.len() != spec.frames {
        return Err(Error::Config(format!(
            "{} frame conditions for {} frames",
            conditions.len(),
            spec.frames
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(render::render_sequence(spec, tracks, conditions, &mut rng))
}

/// Benchmark recipe: sequence count, scenario mix and master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub sequences: usize,
    pub seed: u64,
    /// Relative weights; counts are apportioned by largest remainder.
    pub mix: BTreeMap<Scenario, f64>,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_extent")]
    pub width: usize,
    #[serde(default = "default_extent")]
    pub height: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
}

fn default_frames() -> usize {
    21
}
fn default_extent() -> usize {
    64
}
fn default_classes() -> usize {
    1
}

impl DatasetSpec {
    /// 40% blur, 20% each of clean, defocus and dark.
    pub fn blur_heavy(sequences: usize, seed: u64) -> Self {
        let mix = [
            (Scenario::Clean, 0.2),
            (Scenario::Blur, 0.4),
            (Scenario::Defocus, 0.2),
            (Scenario::Dark, 0.2),
        ];
        Self {
            sequences,
            seed,
            mix: mix.into_iter().collect(),
            frames: default_frames(),
            width: default_extent(),
            height: default_extent(),
            classes: default_classes(),
        }
    }

    pub fn single(scenario: Scenario, sequences: usize, seed: u64) -> Self {
        Self {
            mix: [(scenario, 1.0)].into_iter().collect(),
            ..Self::blur_heavy(sequences, seed)
        }
    }

    /// Number of sequences per scenario.
    pub fn counts(&self) -> Result<BTreeMap<Scenario, usize>> {
        let total: f64 = self.mix.values().sum();
        if self.mix.is_empty() || self.mix.values().any(|w| !(*w >= 0.0)) || total <= 0.0 {
            return Err(Error::Config("scenario mix needs non-negative weights with a positive sum".into()));
        }
        let exact: Vec<(Scenario, f64)> = self
            .mix
            .iter()
            .map(|(s, w)| (*s, w / total * self.sequences as f64))
            .collect();
        let mut counts: BTreeMap<Scenario, usize> = exact.iter().map(|(s, e)| (*s, e.floor() as usize)).collect();
        let mut left = self.sequences - counts.values().sum::<usize>();
        let mut by_remainder = exact.clone();
        by_remainder.sort_by(|a, b| (b.1 - b.1.floor()).total_cmp(&(a.1 - a.1.floor())).then(a.0.cmp(&b.0)));
        for (s, _) in by_remainder {
            if left == 0 {
                break;
            }
            *counts.get_mut(&s).expect("present") += 1;
            left -= 1;
        }
        Ok(counts)
    }

    pub fn scene(&self, scenario: Scenario, seed: u64) -> SceneSpec {
        SceneSpec {
            width: self.width,
            height: self.height,
            frames: self.frames,
            classes: self.classes,
            ..SceneSpec::for_scenario(scenario, seed)
        }
    }
}

/// Seed of sequence `index` under master seed `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub sequences: Vec<SequenceSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// All ground-truth extents in pixels.
    pub fn box_dims(&self) -> Vec<(f64, f64)> {
        self.sequences
            .iter()
            .flat_map(|s| s.boxes.iter().flatten().map(|b| (b.bbox.w, b.bbox.h)))
            .collect()
    }

    /// Leading `train` sequences and the rest.
    pub fn split(&self, train: usize) -> (Dataset, Dataset) {
        let train = train.min(self.len());
        let part = |seqs: &[SequenceSample]| Dataset {
            spec: DatasetSpec {
                sequences: seqs.len(),
                ..self.spec.clone()
            },
            sequences: seqs.to_vec(),
        };
        (part(&self.sequences[..train]), part(&self.sequences[train..]))
    }
}

/// Builds every sequence of a benchmark. Scenario order is shuffled under
/// the master seed so any prefix carries roughly the full mix.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let counts = spec.counts()?;
    let mut tags: Vec<Scenario> = counts.iter().flat_map(|(s, n)| std::iter::repeat_n(*s, *n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rand::seq::SliceRandom::shuffle(tags.as_mut_slice(), &mut rng);
    let sequences = tags
        .into_iter()
        .enumerate()
        .map(|(i, scenario)| {
            let scene = spec.scene(scenario, derive_seed(spec.seed, i as u64));
            generate_sequence(&scene).map(|mut s| {
                s.id = i;
                s
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        sequences,
    })
}
