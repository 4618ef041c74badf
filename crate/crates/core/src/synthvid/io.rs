//! On-disk layout:
//!
//! ```text
//! dir/manifest.json              spec, per-sequence seed and scenario
//! dir/annotations.jsonl          every frame of every sequence
//! dir/seq_000/frame_000.ppm      binary PPM (P6)
//! dir/seq_000/annotations.jsonl  that sequence's frames
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetSpec, Scenario, SequenceSample};
use crate::error::{Error, Result};
use crate::geometry::GroundTruthBox;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub seq: usize,
    pub frame: usize,
    pub boxes: Vec<GroundTruthBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: usize,
    pub dir: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub sequences: Vec<SequenceEntry>,
}

fn data_err(context: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Data {
        context: context.into(),
        reason: reason.into(),
    }
}

/// Writes a `[3, H, W]` plane in `[0, 1]` as 8-bit P6.
pub fn write_ppm(path: &Path, chw: &[f32], width: usize, height: usize) -> Result<()> {
    let plane = width * height;
    let mut buf = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            buf.push((chw[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let enc = PnmEncoder::new(BufWriter::new(file)).with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary));
    enc.write_image(&buf, width as u32, height as u32, ExtendedColorType::Rgb8)
        .map_err(|e| data_err(path.display().to_string(), e.to_string()))
}

/// Reads a PPM into a `[3, H, W]` plane; returns `(data, width, height)`.
pub fn read_ppm(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| data_err(path.display().to_string(), e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut out = vec![0.0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px.0[c] as f32 / 255.0;
        }
    }
    Ok((out, w, h))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an annotation JSONL file, skipping blank lines.
pub fn read_annotations(path: &Path) -> Result<Vec<FrameAnnotation>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: FrameAnnotation = serde_json::from_str(&line)
            .map_err(|e| data_err(format!("{} line {}", path.display(), i + 1), e.to_string()))?;
        out.push(row);
    }
    Ok(out)
}

fn seq_dir_name(id: usize) -> String {
    format!("seq_{id:03}")
}

fn frame_name(t: usize) -> String {
    format!("frame_{t:03}.ppm")
}

fn annotations_of(s: &SequenceSample) -> impl Iterator<Item = FrameAnnotation> + '_ {
    s.boxes.iter().enumerate().map(move |(t, b)| FrameAnnotation {
        seq: s.id,
        frame: t,
        boxes: b.clone(),
    })
}

pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.len());
    for s in &dataset.sequences {
        let name = seq_dir_name(s.id);
        let sd = dir.join(&name);
        fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
        for t in 0..s.len() {
            write_ppm(&sd.join(frame_name(t)), s.frame(t), s.width(), s.height())?;
        }
        write_jsonl(&sd.join("annotations.jsonl"), annotations_of(s))?;
        entries.push(SequenceEntry {
            id: s.id,
            dir: name,
            scenario: s.scenario,
            seed: s.seed,
            frames: s.len(),
        });
    }
    write_jsonl(
        &dir.join("annotations.jsonl"),
        dataset.sequences.iter().flat_map(annotations_of),
    )?;
    let manifest = Manifest {
        spec: dataset.spec.clone(),
        sequences: entries,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Reads `frame_*.ppm` of one sequence directory in name order into
/// `[T, 3, H, W]`.
pub fn load_frames(seq_dir: &Path) -> Result<Tensor<f32>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(seq_dir)
        .map_err(|e| Error::io(seq_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "ppm")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("frame_"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(data_err(seq_dir.display().to_string(), "no frame_*.ppm files"));
    }
    let mut data = Vec::new();
    let mut dims = None;
    for p in &paths {
        let (d, w, h) = read_ppm(p)?;
        if *dims.get_or_insert((w, h)) != (w, h) {
            return Err(data_err(p.display().to_string(), format!("frame is {w}×{h}, expected {:?}", dims)));
        }
        data.extend(d);
    }
    let (w, h) = dims.expect("at least one frame");
    Tensor::new(vec![paths.len(), 3, h, w], data)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| data_err(mpath.display().to_string(), e.to_string()))?;
    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for entry in &manifest.sequences {
        let sd = dir.join(&entry.dir);
        let apath = sd.join("annotations.jsonl");
        if !apath.exists() {
            return Err(data_err(
                format!("sequence {} ({})", entry.id, entry.dir),
                format!("missing annotation file {}", apath.display()),
            ));
        }
        let mut rows = read_annotations(&apath)?;
        rows.sort_by_key(|r| r.frame);
        let frames = load_frames(&sd)?;
        let t = frames.shape()[0];
        if rows.len() != t || rows.iter().enumerate().any(|(i, r)| r.frame != i) {
            return Err(data_err(
                format!("sequence {} ({})", entry.id, entry.dir),
                format!("{} frames but annotations for {} frames", t, rows.len()),
            ));
        }
        sequences.push(SequenceSample {
            id: entry.id,
            frames,
            boxes: rows.into_iter().map(|r| r.boxes).collect(),
            scenario: entry.scenario,
            seed: entry.seed,
        });
    }
    Ok(Dataset {
        spec: manifest.spec,
        sequences,
    })
}
