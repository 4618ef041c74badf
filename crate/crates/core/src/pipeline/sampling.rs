use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GroundTruthBox;
use crate::synthvid::{Dataset, SequenceSample};
use crate::tensor::Tensor;

/// Three frames `[earlier, reference, later]` with the reference frame's
/// ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct StackSample {
    /// `[3, 3, H, W]`.
    pub frames: Tensor<f32>,
    pub boxes: Vec<GroundTruthBox>,
    pub indices: [usize; 3],
}

/// `earlier = reference − U{1..range}`, `later = reference + U{1..range}`,
/// both clamped to the sequence.
pub fn neighbor_indices(len: usize, reference: usize, range: usize, rng: &mut impl Rng) -> Result<[usize; 3]> {
    if reference >= len {
        return Err(Error::InvalidArgument {
            arg: "reference",
            reason: format!("frame {reference} of a {len}-frame sequence"),
        });
    }
    if range == 0 {
        return Err(Error::InvalidArgument {
            arg: "range",
            reason: "neighbor range must be at least 1".into(),
        });
    }
    let back = rng.gen_range(1..=range);
    let ahead = rng.gen_range(1..=range);
    Ok([reference.saturating_sub(back), reference, (reference + ahead).min(len - 1)])
}

fn gather(seq: &SequenceSample, indices: [usize; 3]) -> StackSample {
    let mut data = Vec::with_capacity(3 * seq.frame(0).len());
    for &i in &indices {
        data.extend_from_slice(seq.frame(i));
    }
    StackSample {
        frames: Tensor::new(vec![3, 3, seq.height(), seq.width()], data).expect("three frames"),
        boxes: seq.boxes[indices[1]].clone(),
        indices,
    }
}

pub fn sample_training_stack(seq: &SequenceSample, reference: usize, range: usize, rng: &mut impl Rng) -> Result<StackSample> {
    Ok(gather(seq, neighbor_indices(seq.len(), reference, range, rng)?))
}

/// Fixed ±1 neighbours, clamped.
pub fn eval_stack(seq: &SequenceSample, reference: usize) -> Result<StackSample> {
    if reference >= seq.len() {
        return Err(Error::InvalidArgument {
            arg: "reference",
            reason: format!("frame {reference} of a {}-frame sequence", seq.len()),
        });
    }
    Ok(gather(seq, [reference.saturating_sub(1), reference, (reference + 1).min(seq.len() - 1)]))
}

/// Which frames of each sequence serve as reference frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    #[default]
    All,
    /// One fixed frame per sequence.
    Fixed(usize),
}

/// `(sequence index, reference frame)` pairs in dataset order.
pub fn reference_pairs(data: &Dataset, policy: ReferencePolicy) -> Vec<(usize, usize)> {
    data.sequences
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            let frames: Vec<usize> = match policy {
                ReferencePolicy::All => (0..s.len()).collect(),
                ReferencePolicy::Fixed(t) => vec![t.min(s.len() - 1)],
            };
            frames.into_iter().map(move |t| (i, t))
        })
        .collect()
}

/// Concatenates `[3, 3, H, W]` stacks into `[N, 3, 3, H, W]`.
pub fn batch_stacks(stacks: &[StackSample]) -> Result<Tensor<f32>> {
    let first = stacks.first().ok_or_else(|| Error::InvalidArgument {
        arg: "stacks",
        reason: "empty batch".into(),
    })?;
    let shape = first.frames.shape().to_vec();
    let mut data = Vec::with_capacity(stacks.len() * first.frames.len());
    for s in stacks {
        if s.frames.shape() != shape.as_slice() {
            return Err(Error::shape("batch_stacks", "frame", crate::tensor::fmt_shape(&shape), crate::tensor::fmt_shape(s.frames.shape())));
        }
        data.extend_from_slice(s.frames.data());
    }
    let mut full = vec![stacks.len()];
    full.extend(shape);
    Tensor::new(full, data)
}
