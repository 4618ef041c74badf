//! Single-stage video object detection with a spatial backbone, a 3D
//! temporal-fusion stage and an anchor-based prediction head, implemented
//! from first principles on the CPU.
//!
//! Module map:
//!
//! - [`tensor`]: dense tensors, 2D/3D convolution, reverse-mode tape,
//!   finite-difference checking, SGD and checkpoints
//! - [`geometry`]: boxes, IoU, cell-relative decode/encode, NMS
//! - [`anchors`]: k-means anchor priors and responsible-slot assignment
//! - [`loss`]: focal loss, smooth L1, target grids and the combined objective
//! - [`model`]: backbone, temporal fuser and prediction head
//! - [`synthvid`]: deterministic synthetic video benchmark
//! - [`pipeline`]: training, augmentation, evaluation and experiment presets

pub mod anchors;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod synthvid;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
