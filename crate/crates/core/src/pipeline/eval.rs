//! Detection evaluation: greedy score-ordered matching, precision-recall
//! curves and average precision.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, DetectionBox, GroundTruthBox};
use crate::model::Model;
use crate::synthvid::{Dataset, Scenario};

use super::sampling::{batch_stacks, eval_stack};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoint,
    /// Mean of the envelope at recall 0, 0.1, …, 1.
    ElevenPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    #[serde(rename = "class")]
    pub class_id: usize,
    pub ap: f64,
    pub ground_truths: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// One point per detection in descending score order.
    pub curve: Vec<PrPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    pub map: f64,
    pub classes: Vec<ClassReport>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// mAP over the frames of each scenario.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_scenario: BTreeMap<Scenario, f64>,
}

impl EvalReport {
    /// `recall,precision,score,class` rows.
    pub fn pr_csv(&self) -> String {
        let mut s = String::from("class,recall,precision,score\n");
        for c in &self.classes {
            for p in &c.curve {
                s.push_str(&format!("{},{},{},{}\n", c.class_id, p.recall, p.precision, p.score));
            }
        }
        s
    }
}

pub fn average_precision(curve: &[PrPoint], interp: Interpolation) -> f64 {
    // precision envelope from the right
    let mut env: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    match interp {
        Interpolation::AllPoint => {
            let mut prev = 0.0;
            let mut ap = 0.0;
            for (p, e) in curve.iter().zip(&env) {
                ap += (p.recall - prev) * e;
                prev = p.recall;
            }
            ap
        }
        Interpolation::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let r = k as f64 / 10.0;
                    curve
                        .iter()
                        .zip(&env)
                        .find(|(p, _)| p.recall >= r - 1e-12)
                        .map(|(_, e)| *e)
                        .unwrap_or(0.0)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

/// Matches one class. Returns `(curve, tp, fp, gt count)`.
fn match_class(dets: &[Vec<DetectionBox>], gts: &[Vec<GroundTruthBox>], class_id: usize, thr: f64) -> (Vec<PrPoint>, usize, usize, usize) {
    let gt_boxes: Vec<Vec<&GroundTruthBox>> = gts
        .iter()
        .map(|f| f.iter().filter(|g| g.class_id == class_id).collect())
        .collect();
    let total: usize = gt_boxes.iter().map(Vec::len).sum();
    let mut order: Vec<(usize, &DetectionBox)> = dets
        .iter()
        .enumerate()
        .flat_map(|(f, ds)| ds.iter().filter(|d| d.class_id == class_id).map(move |d| (f, d)))
        .collect();
    // stable: ties keep frame-then-input order
    order.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
    let mut used: Vec<Vec<bool>> = gt_boxes.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(order.len());
    for (f, d) in order {
        let best = gt_boxes[f]
            .iter()
            .enumerate()
            .map(|(j, g)| (j, iou(&d.bbox, &g.bbox)))
            .fold(None::<(usize, f64)>, |acc, (j, o)| match acc {
                Some((_, bo)) if bo >= o => acc,
                _ => Some((j, o)),
            });
        match best {
            Some((j, o)) if o >= thr && !used[f][j] => {
                used[f][j] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
        curve.push(PrPoint {
            recall: if total == 0 { 0.0 } else { tp as f64 / total as f64 },
            precision: tp as f64 / (tp + fp) as f64,
            score: d.score,
        });
    }
    (curve, tp, fp, total)
}

pub fn evaluate_map(dets: &[Vec<DetectionBox>], gts: &[Vec<GroundTruthBox>], iou_threshold: f64) -> Result<EvalReport> {
    evaluate_map_with(dets, gts, iou_threshold, Interpolation::AllPoint)
}

/// Per-class AP over frames. A class with no ground truth scores 1 if it
/// also has no detections and 0 otherwise; with no classes at all mAP is 1.
pub fn evaluate_map_with(
    dets: &[Vec<DetectionBox>],
    gts: &[Vec<GroundTruthBox>],
    iou_threshold: f64,
    interpolation: Interpolation,
) -> Result<EvalReport> {
    if dets.len() != gts.len() {
        return Err(Error::InvalidArgument {
            arg: "detections",
            reason: format!("{} detection frames for {} ground-truth frames", dets.len(), gts.len()),
        });
    }
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::InvalidArgument {
            arg: "iou",
            reason: format!("threshold {iou_threshold} outside (0, 1]"),
        });
    }
    let classes: BTreeSet<usize> = gts
        .iter()
        .flatten()
        .map(|g| g.class_id)
        .chain(dets.iter().flatten().map(|d| d.class_id))
        .collect();
    let mut reports = Vec::with_capacity(classes.len());
    for c in classes {
        let (curve, tp, fp, total) = match_class(dets, gts, c, iou_threshold);
        let ap = if total == 0 {
            if curve.is_empty() {
                1.0
            } else {
                0.0
            }
        } else {
            average_precision(&curve, interpolation)
        };
        reports.push(ClassReport {
            class_id: c,
            ap,
            ground_truths: total,
            tp,
            fp,
            fn_: total - tp,
            curve,
        });
    }
    let map = if reports.is_empty() {
        1.0
    } else {
        reports.iter().map(|r| r.ap).sum::<f64>() / reports.len() as f64
    };
    Ok(EvalReport {
        iou_threshold,
        interpolation,
        map,
        tp: reports.iter().map(|r| r.tp).sum(),
        fp: reports.iter().map(|r| r.fp).sum(),
        fn_: reports.iter().map(|r| r.fn_).sum(),
        classes: reports,
        per_scenario: BTreeMap::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub nms_threshold: f64,
    pub interpolation: Interpolation,
    pub batch_size: usize,
}

/// Defaults follow the UA-DETRAC protocol (IoU 0.7); the desk presets
/// evaluate at 0.5.
impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.7,
            score_threshold: 0.01,
            nms_threshold: 0.45,
            interpolation: Interpolation::AllPoint,
            batch_size: 16,
        }
    }
}

/// Detections of the model on each `(sequence, reference)` pair, using
/// fixed ±1 neighbours.
pub fn detect_pairs(model: &Model, data: &Dataset, pairs: &[(usize, usize)], cfg: &EvalConfig) -> Result<Vec<Vec<DetectionBox>>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(cfg.batch_size.max(1)) {
        let stacks = chunk
            .iter()
            .map(|&(s, t)| eval_stack(&data.sequences[s], t))
            .collect::<Result<Vec<_>>>()?;
        out.extend(model.predict(&batch_stacks(&stacks)?, cfg.score_threshold, cfg.nms_threshold)?);
    }
    Ok(out)
}

/// Overall and per-scenario mAP of `model` on the given reference frames.
pub fn evaluate_model(model: &Model, data: &Dataset, pairs: &[(usize, usize)], cfg: &EvalConfig) -> Result<EvalReport> {
    let dets = detect_pairs(model, data, pairs, cfg)?;
    let gts: Vec<Vec<GroundTruthBox>> = pairs.iter().map(|&(s, t)| data.sequences[s].boxes[t].clone()).collect();
    let mut report = evaluate_map_with(&dets, &gts, cfg.iou_threshold, cfg.interpolation)?;
    let scenarios: BTreeSet<Scenario> = pairs.iter().map(|&(s, _)| data.sequences[s].scenario).collect();
    for sc in scenarios {
        let idx: Vec<usize> = (0..pairs.len()).filter(|&i| data.sequences[pairs[i].0].scenario == sc).collect();
        let d: Vec<_> = idx.iter().map(|&i| dets[i].clone()).collect();
        let g: Vec<_> = idx.iter().map(|&i| gts[i].clone()).collect();
        report
            .per_scenario
            .insert(sc, evaluate_map_with(&d, &g, cfg.iou_threshold, cfg.interpolation)?.map);
    }
    Ok(report)
}
