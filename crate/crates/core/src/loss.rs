//! Focal loss, smooth L1, target grids and the combined detection objective
//!
//! ```text
//! L = λ · L_loc + L_cls
//! ```
//!
//! where `L_loc` is smooth L1 on the regression parameters of responsible
//! slots and `L_cls` is focal loss on objectness (all slots) and on class
//! probabilities (responsible slots).

use serde::{Deserialize, Serialize};

use crate::anchors::{assign_responsible, AnchorSet, GridSpec};
use crate::error::{Error, Result};
use crate::geometry::{encode, iou, sigmoid, BBox, GroundTruthBox};
use crate::tensor::{Element, Tensor};

/// Probabilities are clamped to `[P_CLAMP, 1 − P_CLAMP]` before the log.
pub const P_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: 1.0 }
    }
}

impl FocalConfig {
    /// `γ = 0, α = 1`: plain cross-entropy.
    pub fn cross_entropy() -> Self {
        Self { gamma: 0.0, alpha: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectnessTarget {
    /// IoU between the decoded prediction and its ground truth, recomputed
    /// every evaluation and treated as a constant.
    Iou,
    One,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda: f64,
    pub focal: FocalConfig,
    pub noobj_weight: f64,
    /// Use `0.5·x²` on the quadratic branch instead of `x²`.
    pub smooth_l1_halved: bool,
    pub objectness_target: ObjectnessTarget,
    /// Apply the focusing term to objectness; otherwise cross-entropy.
    pub focal_objectness: bool,
    /// Apply the focusing term to class probabilities; otherwise cross-entropy.
    pub focal_classes: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            focal: FocalConfig::default(),
            noobj_weight: 0.5,
            smooth_l1_halved: false,
            objectness_target: ObjectnessTarget::Iou,
            focal_objectness: true,
            focal_classes: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("loss balance λ must be positive, got {}", self.lambda)));
        }
        if !(self.focal.gamma >= 0.0) {
            return Err(Error::Config(format!("focal γ must be non-negative, got {}", self.focal.gamma)));
        }
        if !(self.focal.alpha > 0.0 && self.focal.alpha <= 1.0) {
            return Err(Error::Config(format!("focal α must lie in (0, 1], got {}", self.focal.alpha)));
        }
        if !(self.noobj_weight >= 0.0) {
            return Err(Error::Config("noobj_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// `−α (1 − p_t)^γ ln p_t` with `p_t` clamped away from 0 and 1.
pub fn focal_loss(p_t: f64, cfg: &FocalConfig) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p_t), "p_t = {p_t} outside [0, 1]");
    let p = p_t.clamp(P_CLAMP, 1.0 - P_CLAMP);
    -cfg.alpha * (1.0 - p).powf(cfg.gamma) * p.ln()
}

/// `d focal_loss / d p_t`; zero where the clamp is active.
pub fn focal_loss_grad(p_t: f64, cfg: &FocalConfig) -> f64 {
    if !(P_CLAMP..=1.0 - P_CLAMP).contains(&p_t) {
        return 0.0;
    }
    let p = p_t;
    let q = 1.0 - p;
    let focus = if cfg.gamma == 0.0 {
        0.0
    } else {
        cfg.gamma * q.powf(cfg.gamma - 1.0) * p.ln()
    };
    cfg.alpha * (focus - q.powf(cfg.gamma) / p)
}

/// `x²` for `|x| < 1`, `|x| − 0.5` otherwise; `halved` selects `0.5·x²` on
/// the quadratic branch, which makes the function continuous at `|x| = 1`.
pub fn smooth_l1(x: f64, halved: bool) -> f64 {
    if x.abs() < 1.0 {
        if halved {
            0.5 * x * x
        } else {
            x * x
        }
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64, halved: bool) -> f64 {
    if x.abs() < 1.0 {
        if halved {
            x
        } else {
            2.0 * x
        }
    } else {
        x.signum()
    }
}

/// Training target for one responsible slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotTarget {
    /// Regression target `(t_x, t_y, t_w, t_h)`.
    pub t: [f64; 4],
    pub class_id: usize,
    /// Ground truth in cell units.
    pub gt: BBox,
    pub gt_index: usize,
}

/// Per-`(anchor, cell)` targets of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetGrid {
    pub grid: GridSpec,
    pub anchors: usize,
    pub classes: usize,
    slots: Vec<Option<SlotTarget>>,
    /// Ground truths that could not be assigned a free slot.
    pub dropped: Vec<usize>,
}

impl TargetGrid {
    pub fn empty(grid: GridSpec, anchors: usize, classes: usize) -> Self {
        Self {
            grid,
            anchors,
            classes,
            slots: vec![None; anchors * grid.width * grid.height],
            dropped: Vec::new(),
        }
    }

    fn index(&self, anchor: usize, gy: usize, gx: usize) -> usize {
        (anchor * self.grid.height + gy) * self.grid.width + gx
    }

    pub fn slot(&self, anchor: usize, gy: usize, gx: usize) -> Option<&SlotTarget> {
        self.slots[self.index(anchor, gy, gx)].as_ref()
    }

    pub fn positive_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Mask in `(anchor, gy, gx)` order.
    pub fn positive_mask(&self) -> Vec<bool> {
        self.slots.iter().map(Option::is_some).collect()
    }

    /// `(anchor, gy, gx, target)` of every positive slot.
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize, usize, &SlotTarget)> {
        let (w, h) = (self.grid.width, self.grid.height);
        self.slots
            .iter()
            .enumerate()
            .filter_map(move |(i, s)| s.as_ref().map(|s| (i / (w * h), (i / w) % h, i % w, s)))
    }
}

/// Responsible-slot targets for one frame's ground truths.
pub fn build_targets(gts: &[GroundTruthBox], grid: &GridSpec, anchors: &AnchorSet, classes: usize) -> Result<TargetGrid> {
    let mut tg = TargetGrid::empty(*grid, anchors.len(), classes);
    if let Some((i, g)) = gts.iter().enumerate().find(|(_, g)| g.class_id >= classes) {
        return Err(Error::Data {
            context: "build_targets".into(),
            reason: format!("ground truth {i} has class {} but the head predicts {classes}", g.class_id),
        });
    }
    let map = assign_responsible(gts, grid, anchors)?;
    for a in &map.assignments {
        let gt = &gts[a.gt_index];
        let prior = anchors.get(a.anchor_index);
        let t = encode(&gt.bbox, a.cell, prior, grid.stride);
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite regression target for ground truth {}", a.gt_index)));
        }
        let idx = tg.index(a.anchor_index, a.cell.1, a.cell.0);
        tg.slots[idx] = Some(SlotTarget {
            t,
            class_id: gt.class_id,
            gt: gt.bbox.scale(1.0 / grid.stride),
            gt_index: a.gt_index,
        });
    }
    tg.dropped = map.dropped;
    Ok(tg)
}

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub total: f64,
    /// `λ · L_loc`, batch mean.
    pub regression: f64,
    pub objectness: f64,
    pub classification: f64,
    pub positives: usize,
    /// `∂ total / ∂ raw`.
    pub grad: Tensor<T>,
}

/// Channel offset of field `f` (0..5+C) for anchor `a`.
#[inline]
pub fn channel(anchor: usize, field: usize, classes: usize) -> usize {
    anchor * (5 + classes) + field
}

/// Combined objective over a batch of raw head outputs
/// `[N, K·(5+C), H, W]`, normalized by batch size. Regression is averaged
/// over each sample's positives.
pub fn multi_part_loss<T: Element>(
    raw: &Tensor<T>,
    targets: &[TargetGrid],
    anchors: &AnchorSet,
    cfg: &LossConfig,
) -> Result<LossOutput<T>> {
    cfg.validate()?;
    let [n, ch, gh, gw] = match *raw.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(Error::shape("multi_part_loss", "rank", 4, raw.rank())),
    };
    if targets.len() != n {
        return Err(Error::shape("multi_part_loss", "batch", n, targets.len()));
    }
    let k = anchors.len();
    for tg in targets {
        if tg.anchors != k || tg.grid.width != gw || tg.grid.height != gh {
            return Err(Error::shape(
                "multi_part_loss",
                "target grid",
                format!("{k} anchors on {gh}×{gw}"),
                format!("{} anchors on {}×{}", tg.anchors, tg.grid.height, tg.grid.width),
            ));
        }
    }
    let classes = targets.first().map(|t| t.classes).unwrap_or(ch / k - 5);
    if ch != k * (5 + classes) {
        return Err(Error::shape("multi_part_loss", "channel", k * (5 + classes), ch));
    }

    let x = raw.data();
    let mut grad = vec![0.0f64; x.len()];
    let obj_focal = if cfg.focal_objectness { cfg.focal } else { FocalConfig { gamma: 0.0, ..cfg.focal } };
    let cls_focal = if cfg.focal_classes { cfg.focal } else { FocalConfig { gamma: 0.0, ..cfg.focal } };
    let inv_n = 1.0 / n as f64;
    let (mut reg_total, mut obj_total, mut cls_total) = (0.0, 0.0, 0.0);
    let mut positives = 0;
    let mut logits = vec![0.0; classes];

    for (s, tg) in targets.iter().enumerate() {
        let at = |c: usize, gy: usize, gx: usize| ((s * ch + c) * gh + gy) * gw + gx;
        let npos = tg.positive_count();
        positives += npos;
        let reg_scale = cfg.lambda / npos.max(1) as f64;
        let (mut reg, mut obj, mut cls) = (0.0, 0.0, 0.0);
        for a in 0..k {
            let prior = anchors.get(a);
            for gy in 0..gh {
                for gx in 0..gw {
                    let io = at(channel(a, 4, classes), gy, gx);
                    let sig = sigmoid(x[io].to_f64());
                    let dsig = sig * (1.0 - sig);
                    let Some(st) = tg.slot(a, gy, gx) else {
                        let w = cfg.noobj_weight;
                        obj += w * focal_loss(1.0 - sig, &obj_focal);
                        grad[io] -= w * focal_loss_grad(1.0 - sig, &obj_focal) * dsig * inv_n;
                        continue;
                    };
                    let mut t = [0.0; 4];
                    for (f, tv) in t.iter_mut().enumerate() {
                        let i = at(channel(a, f, classes), gy, gx);
                        *tv = x[i].to_f64();
                        let d = *tv - st.t[f];
                        reg += smooth_l1(d, cfg.smooth_l1_halved);
                        grad[i] += reg_scale * smooth_l1_grad(d, cfg.smooth_l1_halved) * inv_n;
                    }
                    let y = match cfg.objectness_target {
                        ObjectnessTarget::One => 1.0,
                        ObjectnessTarget::Iou => {
                            let pred = BBox::new(
                                sigmoid(t[0]) + gx as f64,
                                sigmoid(t[1]) + gy as f64,
                                prior.w * t[2].exp(),
                                prior.h * t[3].exp(),
                            );
                            iou(&pred, &st.gt)
                        }
                    };
                    obj += y * focal_loss(sig, &obj_focal) + (1.0 - y) * focal_loss(1.0 - sig, &obj_focal);
                    grad[io] += (y * focal_loss_grad(sig, &obj_focal) - (1.0 - y) * focal_loss_grad(1.0 - sig, &obj_focal))
                        * dsig
                        * inv_n;

                    if classes > 1 {
                        for (c, l) in logits.iter_mut().enumerate() {
                            *l = x[at(channel(a, 5 + c, classes), gy, gx)].to_f64();
                        }
                        let probs = softmax(&logits);
                        let pt = probs[st.class_id];
                        cls += focal_loss(pt, &cls_focal);
                        let dl_dp = focal_loss_grad(pt, &cls_focal);
                        for (c, &pc) in probs.iter().enumerate() {
                            let delta = if c == st.class_id { 1.0 } else { 0.0 };
                            grad[at(channel(a, 5 + c, classes), gy, gx)] += dl_dp * pt * (delta - pc) * inv_n;
                        }
                    }
                }
            }
        }
        reg_total += reg_scale * reg;
        obj_total += obj;
        cls_total += cls;
    }
    let (regression, objectness, classification) = (reg_total * inv_n, obj_total * inv_n, cls_total * inv_n);
    Ok(LossOutput {
        total: regression + objectness + classification,
        regression,
        objectness,
        classification,
        positives,
        grad: Tensor::new(raw.shape().to_vec(), grad.into_iter().map(T::from_f64).collect())?,
    })
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::AnchorPrior;

    #[test]
    fn focal_reference_values() {
        // −ln 0.9 = 0.105360515657826 (mpmath, 30 digits)
        let ce = focal_loss(0.9, &FocalConfig::cross_entropy());
        assert!((ce - 0.105_360_515_657_826).abs() < 1e-6);
        let fl = focal_loss(0.9, &FocalConfig { gamma: 2.0, alpha: 1.0 });
        assert!((fl - 0.001_053_605_156_578_26).abs() < 1e-7);
    }

    #[test]
    fn focal_vanishes_at_certainty() {
        let cfg = FocalConfig::default();
        let mut prev = f64::INFINITY;
        for p in [0.5, 0.9, 0.99, 0.999_999, 1.0] {
            let l = focal_loss(p, &cfg);
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(0.0, false), 0.0);
        assert_eq!(smooth_l1(1.0, false), 0.5);
        assert_eq!(smooth_l1(-1.0, false), 0.5);
        assert_eq!(smooth_l1(2.0, false), 1.5);
        assert_eq!(smooth_l1(0.5, false), 0.25);
        assert_eq!(smooth_l1(0.5, true), 0.125);
        assert_eq!(smooth_l1(-3.0, true), 2.5);
    }

    fn setup() -> (GridSpec, AnchorSet) {
        let grid = GridSpec {
            width: 4,
            height: 4,
            stride: 8.0,
        };
        let anchors = AnchorSet::new(vec![AnchorPrior::new(1.0, 1.0), AnchorPrior::new(2.0, 3.0)]).unwrap();
        (grid, anchors)
    }

    #[test]
    fn empty_scene_is_all_negative() {
        let (grid, anchors) = setup();
        let tg = build_targets(&[], &grid, &anchors, 1).unwrap();
        assert_eq!(tg.positive_count(), 0);
        let raw = Tensor::<f64>::zeros(vec![1, 12, 4, 4]);
        let out = multi_part_loss(&raw, &[tg], &anchors, &LossConfig::default()).unwrap();
        assert_eq!(out.regression, 0.0);
        assert!(out.total.is_finite() && out.total > 0.0);
    }

    #[test]
    fn one_gt_one_positive() {
        let (grid, anchors) = setup();
        let gts = vec![GroundTruthBox::new(21.0, 13.0, 15.0, 25.0, 0)];
        let tg = build_targets(&gts, &grid, &anchors, 1).unwrap();
        assert_eq!(tg.positive_count(), 1);
        let (a, gy, gx, st) = tg.positives().next().unwrap();
        assert_eq!((a, gy, gx), (1, 1, 2));
        assert_eq!(st.class_id, 0);
    }

    #[test]
    fn class_out_of_range_is_rejected() {
        let (grid, anchors) = setup();
        let gts = vec![GroundTruthBox::new(5.0, 5.0, 4.0, 4.0, 2)];
        assert!(build_targets(&gts, &grid, &anchors, 2).is_err());
    }

    #[test]
    fn perfect_predictions_have_near_zero_loss() {
        let (grid, anchors) = setup();
        let classes = 2;
        let gts = vec![
            GroundTruthBox::new(21.0, 13.0, 15.0, 25.0, 1),
            GroundTruthBox::new(5.0, 27.0, 8.0, 7.0, 0),
        ];
        let tg = build_targets(&gts, &grid, &anchors, classes).unwrap();
        let ch = anchors.len() * (5 + classes);
        let mut raw = Tensor::<f64>::zeros(vec![1, ch, 4, 4]);
        for a in 0..2 {
            for gy in 0..4 {
                for gx in 0..4 {
                    raw.set(&[0, channel(a, 4, classes), gy, gx], -40.0);
                }
            }
        }
        for (a, gy, gx, st) in tg.positives() {
            for f in 0..4 {
                raw.set(&[0, channel(a, f, classes), gy, gx], st.t[f]);
            }
            raw.set(&[0, channel(a, 4, classes), gy, gx], 40.0);
            raw.set(&[0, channel(a, 5 + st.class_id, classes), gy, gx], 40.0);
        }
        for cfg in [LossConfig::default(), LossConfig { focal: FocalConfig::cross_entropy(), ..Default::default() }] {
            let out = multi_part_loss(&raw, std::slice::from_ref(&tg), &anchors, &cfg).unwrap();
            assert!(out.total < 1e-3, "{}", out.total);
        }
    }

    #[test]
    fn lambda_scales_only_regression() {
        let (grid, anchors) = setup();
        let gts = vec![GroundTruthBox::new(21.0, 13.0, 15.0, 25.0, 0)];
        let tg = build_targets(&gts, &grid, &anchors, 1).unwrap();
        let raw = Tensor::<f64>::from_fn(vec![1, 12, 4, 4], |i| ((i * 7919) % 13) as f64 * 0.3 - 1.8);
        let cfg = LossConfig::default();
        let a = multi_part_loss(&raw, std::slice::from_ref(&tg), &anchors, &cfg).unwrap();
        let b = multi_part_loss(&raw, &[tg], &anchors, &LossConfig { lambda: 2.0, ..cfg }).unwrap();
        assert_eq!(b.regression, 2.0 * a.regression);
        assert_eq!(b.objectness, a.objectness);
        assert_eq!(b.classification, a.classification);
    }
}
