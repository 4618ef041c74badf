//! Axis-aligned boxes, IoU, the cell-relative box parameterization and
//! greedy non-maximum suppression.
//!
//! Boxes are stored center-format `(cx, cy, w, h)`. A raw prediction
//! `(t_x, t_y, t_w, t_h, t_o)` at grid cell `(c_x, c_y)` with anchor prior
//! `(p_w, p_h)` decodes to
//!
//! ```text
//! b_x = σ(t_x) + c_x     b_w = p_w · e^{t_w}
//! b_y = σ(t_y) + c_y     b_h = p_h · e^{t_h}
//! score = σ(t_o)
//! ```
//!
//! in cell units, scaled by the grid stride to pixels.

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorPrior;

/// Center-format axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            cx: 0.5 * (x0 + x1),
            cy: 0.5 * (y0 + y1),
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            cx: self.cx * factor,
            cy: self.cy * factor,
            w: self.w * factor,
            h: self.h * factor,
        }
    }
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// IoU of two extents placed at a common center.
pub fn shape_iou(w1: f64, h1: f64, w2: f64, h2: f64) -> f64 {
    let inter = w1.min(w2) * h1.min(h2);
    let union = w1 * h1 + w2 * h2 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    #[serde(flatten)]
    pub bbox: BBox,
    pub score: f64,
    #[serde(rename = "class")]
    pub class_id: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    #[serde(flatten)]
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub class_id: usize,
}

impl GroundTruthBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, class_id: usize) -> Self {
        Self {
            bbox: BBox::new(cx, cy, w, h),
            class_id,
        }
    }
}

/// Unconstrained network outputs for one `(cell, anchor)` slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawPrediction {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
    pub to: f64,
    pub cell: (usize, usize),
    pub anchor_index: usize,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    crate::tensor::ops::sigmoid(x)
}

/// Inverse of [`sigmoid`] on `(0, 1)`.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Decode in cell units: center offsets inside the cell, extents as
/// multiples of the prior.
pub fn decode_cells(raw: &RawPrediction, prior: &AnchorPrior) -> (BBox, f64) {
    let bbox = BBox {
        cx: sigmoid(raw.tx) + raw.cell.0 as f64,
        cy: sigmoid(raw.ty) + raw.cell.1 as f64,
        w: prior.w * raw.tw.exp(),
        h: prior.h * raw.th.exp(),
    };
    (bbox, sigmoid(raw.to))
}

/// Decode to pixels: cell units times `stride`. Class is left at 0; the
/// caller fills it from the class logits.
pub fn decode(raw: &RawPrediction, prior: &AnchorPrior, stride: f64) -> DetectionBox {
    let (b, score) = decode_cells(raw, prior);
    DetectionBox {
        bbox: b.scale(stride),
        score,
        class_id: 0,
    }
}

/// Center offsets on a cell boundary are clamped into `[ε, 1 − ε]` before
/// the inverse sigmoid.
pub const ENCODE_OFFSET_CLAMP: f64 = 1e-4;

/// Regression target `(t_x, t_y, t_w, t_h)` that decodes back to `gt`.
pub fn encode(gt: &BBox, cell: (usize, usize), prior: &AnchorPrior, stride: f64) -> [f64; 4] {
    let ox = (gt.cx / stride - cell.0 as f64).clamp(ENCODE_OFFSET_CLAMP, 1.0 - ENCODE_OFFSET_CLAMP);
    let oy = (gt.cy / stride - cell.1 as f64).clamp(ENCODE_OFFSET_CLAMP, 1.0 - ENCODE_OFFSET_CLAMP);
    [
        logit(ox),
        logit(oy),
        (gt.w / stride / prior.w).ln(),
        (gt.h / stride / prior.h).ln(),
    ]
}

/// Greedy per-class suppression. Boxes below `score_threshold` are dropped
/// first; the rest are visited by descending score (ties by input order)
/// and kept iff their IoU with every kept box of the same class is below
/// `iou_threshold`.
pub fn nms(boxes: &[DetectionBox], iou_threshold: f64, score_threshold: f64) -> Vec<DetectionBox> {
    let mut order: Vec<usize> = (0..boxes.len())
        .filter(|&i| boxes[i].score >= score_threshold)
        .collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score).then(a.cmp(&b)));
    let mut kept: Vec<DetectionBox> = Vec::new();
    for i in order {
        let cand = &boxes[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == cand.class_id && iou(&k.bbox, &cand.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(*cand);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f64, cy: f64, w: f64, h: f64, score: f64) -> DetectionBox {
        DetectionBox {
            bbox: BBox::new(cx, cy, w, h),
            score,
            class_id: 0,
        }
    }

    #[test]
    fn iou_cases() {
        let a = BBox::new(1.0, 1.0, 2.0, 2.0);
        let b = BBox::new(2.0, 1.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &BBox::new(10.0, 10.0, 1.0, 1.0)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &BBox::new(3.0, 1.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn corner_round_trip() {
        let b = BBox::new(3.5, -2.0, 4.0, 1.5);
        let (x0, y0, x1, y1) = b.corners();
        assert_eq!(BBox::from_corners(x0, y0, x1, y1), b);
    }

    #[test]
    fn decode_at_zero() {
        let raw = RawPrediction {
            tx: 0.0,
            ty: 0.0,
            tw: 0.0,
            th: 0.0,
            to: 0.0,
            cell: (0, 0),
            anchor_index: 0,
        };
        let (b, s) = decode_cells(&raw, &AnchorPrior::new(2.0, 1.5));
        assert_eq!((b.cx, b.cy, b.w, b.h, s), (0.5, 0.5, 2.0, 1.5, 0.5));
    }

    #[test]
    fn decode_reference_values() {
        // reference values from an mpmath evaluation at 30 digits
        let raw = RawPrediction {
            tx: 0.2,
            ty: -0.3,
            tw: 0.5,
            th: -0.5,
            to: 0.0,
            cell: (3, 4),
            anchor_index: 0,
        };
        let (b, _) = decode_cells(&raw, &AnchorPrior::new(2.0, 1.5));
        assert!((b.cx - 3.549_833_997).abs() < 1e-6);
        assert!((b.cy - 4.425_557_483).abs() < 1e-6);
        assert!((b.w - 3.297_442_541).abs() < 1e-6);
        assert!((b.h - 0.909_795_989).abs() < 1e-6);
    }

    #[test]
    fn encode_fixed_point_and_log_extent() {
        let prior = AnchorPrior::new(2.0, 3.0);
        let stride = 8.0;
        let gt = BBox::new(8.0 * 2.5, 8.0 * 1.5, 16.0, 24.0);
        let t = encode(&gt, (2, 1), &prior, stride);
        for v in t {
            assert!(v.abs() < 1e-12);
        }
        let gt = BBox::new(20.0, 12.0, std::f64::consts::E * 16.0, 24.0);
        let t = encode(&gt, (2, 1), &prior, stride);
        assert!((t[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encode_clamps_boundary_center() {
        let prior = AnchorPrior::new(1.0, 1.0);
        let t = encode(&BBox::new(16.0, 8.0, 8.0, 8.0), (2, 1), &prior, 8.0);
        assert!(t.iter().all(|v| v.is_finite()));
        assert!((sigmoid(t[0]) - ENCODE_OFFSET_CLAMP).abs() < 1e-12);
    }

    #[test]
    fn nms_basics() {
        let one = vec![det(5.0, 5.0, 2.0, 2.0, 0.3)];
        assert_eq!(nms(&one, 0.5, 0.0), one);
        let two = vec![det(5.0, 5.0, 2.0, 2.0, 0.8), det(5.0, 5.0, 2.0, 2.0, 0.9)];
        let kept = nms(&two, 0.5, 0.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
        // other classes are not suppressed
        let mut mixed = two.clone();
        mixed[0].class_id = 1;
        assert_eq!(nms(&mixed, 0.5, 0.0).len(), 2);
        // score filter runs first
        assert!(nms(&two, 0.5, 0.95).is_empty());
    }
}
