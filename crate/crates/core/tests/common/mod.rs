//! Independent reference implementations shared by the integration tests.
//! Everything here is written from the definitions with plain loops and
//! deliberately shares no code paths with the library.

#![allow(dead_code)]

use detnet::anchors::AnchorPrior;
use detnet::geometry::{DetectionBox, GroundTruthBox};

/// Nested-loop cross-correlation on `[n, c, t, h, w]` with weight
/// `[o, c, kt, kh, kw]`. Returns the output and its shape.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    xs: [usize; 5],
    w: &[f64],
    ws: [usize; 5],
    b: &[f64],
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<f64>, [usize; 5]) {
    let [n, c, t, h, wd] = xs;
    let [o, wc, kt, kh, kw] = ws;
    assert_eq!(c, wc);
    let ot = (t + 2 * pad[0] - kt) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (wd + 2 * pad[2] - kw) / stride[2] + 1;
    let mut out = vec![0.0; n * o * ot * oh * ow];
    let xi = |bn: usize, ci: usize, ti: usize, yi: usize, xx: usize| (((bn * c + ci) * t + ti) * h + yi) * wd + xx;
    let wi = |oi: usize, ci: usize, a: usize, p: usize, q: usize| (((oi * c + ci) * kt + a) * kh + p) * kw + q;
    let mut idx = 0;
    for bn in 0..n {
        for oi in 0..o {
            for zt in 0..ot {
                for zy in 0..oh {
                    for zx in 0..ow {
                        let mut acc = b[oi];
                        for ci in 0..c {
                            for a in 0..kt {
                                for p in 0..kh {
                                    for q in 0..kw {
                                        let ti = (zt * stride[0] + a) as isize - pad[0] as isize;
                                        let yi = (zy * stride[1] + p) as isize - pad[1] as isize;
                                        let xx = (zx * stride[2] + q) as isize - pad[2] as isize;
                                        if ti < 0 || yi < 0 || xx < 0 || ti >= t as isize || yi >= h as isize || xx >= wd as isize {
                                            continue;
                                        }
                                        acc += w[wi(oi, ci, a, p, q)] * x[xi(bn, ci, ti as usize, yi as usize, xx as usize)];
                                    }
                                }
                            }
                        }
                        out[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
    }
    (out, [n, o, ot, oh, ow])
}

/// Window scan: maximum of every non-overlapping 2×2 window.
pub fn naive_maxpool(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for plane in 0..n * c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let mut m = f64::NEG_INFINITY;
                for y in 2 * oy..2 * oy + 2 {
                    for xx in 2 * ox..2 * ox + 2 {
                        m = m.max(x[plane * h * w + y * w + xx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn corner_iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let (ax0, ay0, ax1, ay1) = (a.0 - a.2 / 2.0, a.1 - a.3 / 2.0, a.0 + a.2 / 2.0, a.1 + a.3 / 2.0);
    let (bx0, by0, bx1, by1) = (b.0 - b.2 / 2.0, b.1 - b.3 / 2.0, b.0 + b.2 / 2.0, b.1 + b.3 / 2.0);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.2 * a.3 + b.2 * b.3 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn det_tuple(d: &DetectionBox) -> (f64, f64, f64, f64) {
    (d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h)
}

pub fn gt_tuple(g: &GroundTruthBox) -> (f64, f64, f64, f64) {
    (g.bbox.cx, g.bbox.cy, g.bbox.w, g.bbox.h)
}

/// Shared-center IoU of two extents.
pub fn extent_iou(w1: f64, h1: f64, w2: f64, h2: f64) -> f64 {
    let inter = w1.min(w2) * h1.min(h2);
    inter / (w1 * h1 + w2 * h2 - inter)
}

/// O(n²) greedy suppression: a box survives iff no higher-ranked surviving
/// box of its class overlaps it at or above the threshold.
pub fn brute_nms(boxes: &[DetectionBox], iou_thr: f64, score_thr: f64) -> Vec<DetectionBox> {
    let n = boxes.len();
    let ranks_before = |i: usize, j: usize| {
        boxes[j].score > boxes[i].score || (boxes[j].score == boxes[i].score && j < i)
    };
    let mut alive: Vec<bool> = boxes.iter().map(|b| b.score >= score_thr).collect();
    let mut decided = vec![false; n];
    // resolve boxes strictly in rank order
    for _ in 0..n {
        let next = (0..n)
            .filter(|&i| alive[i] && !decided[i])
            .find(|&i| (0..n).all(|j| j == i || !alive[j] || decided[j] || !ranks_before(i, j)));
        let Some(i) = next else { break };
        decided[i] = true;
        for j in 0..n {
            if j != i
                && alive[j]
                && !decided[j]
                && boxes[j].class_id == boxes[i].class_id
                && corner_iou(det_tuple(&boxes[i]), det_tuple(&boxes[j])) >= iou_thr
            {
                alive[j] = false;
            }
        }
    }
    let mut kept: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    kept.sort_by(|&a, &b| {
        if ranks_before(a, b) {
            std::cmp::Ordering::Greater
        } else if ranks_before(b, a) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Equal
        }
    });
    kept.into_iter().map(|i| boxes[i]).collect()
}

/// Brute-force responsible slots: for each ground truth, in claim order
/// (area descending, index ascending), scan all anchors of every cell and
/// keep the free one of its own cell with maximal shape-IoU (lowest index on
/// ties). Returns `(gt, cell_x, cell_y, anchor)` sorted by gt, and dropped gts.
pub fn brute_assign(
    gts: &[GroundTruthBox],
    gw: usize,
    gh: usize,
    stride: f64,
    priors: &[AnchorPrior],
) -> (Vec<(usize, usize, usize, usize)>, Vec<usize>) {
    let mut order: Vec<usize> = (0..gts.len()).collect();
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            let (a, b) = (order[i], order[j]);
            let (aa, ab) = (gts[a].bbox.w * gts[a].bbox.h, gts[b].bbox.w * gts[b].bbox.h);
            if ab > aa || (ab == aa && b < a) {
                order.swap(i, j);
            }
        }
    }
    let mut taken = vec![false; gw * gh * priors.len()];
    let mut out = Vec::new();
    let mut dropped = Vec::new();
    for gi in order {
        let g = &gts[gi].bbox;
        let mut best: Option<(usize, usize, usize, f64)> = None;
        for cy in 0..gh {
            for cx in 0..gw {
                let inside_x = g.cx >= cx as f64 * stride && (g.cx < (cx + 1) as f64 * stride || cx + 1 == gw);
                let inside_y = g.cy >= cy as f64 * stride && (g.cy < (cy + 1) as f64 * stride || cy + 1 == gh);
                if !(inside_x && inside_y) {
                    continue;
                }
                for (a, p) in priors.iter().enumerate() {
                    if taken[(cy * gw + cx) * priors.len() + a] {
                        continue;
                    }
                    let s = extent_iou(g.w / stride, g.h / stride, p.w, p.h);
                    if best.is_none_or(|b| s > b.3) {
                        best = Some((cx, cy, a, s));
                    }
                }
            }
        }
        match best {
            Some((cx, cy, a, _)) => {
                taken[(cy * gw + cx) * priors.len() + a] = true;
                out.push((gi, cx, cy, a));
            }
            None => dropped.push(gi),
        }
    }
    out.sort();
    dropped.sort();
    (out, dropped)
}

/// Reference AP: for every prefix of the score-sorted detections, rerun the
/// matching from scratch (each detection takes its highest-IoU ground truth
/// in the same frame if unused and above threshold), then integrate the
/// precision envelope over recall. Single class.
pub fn brute_ap(dets: &[Vec<DetectionBox>], gts: &[Vec<GroundTruthBox>], thr: f64) -> f64 {
    let total: usize = gts.iter().map(Vec::len).sum();
    let mut flat: Vec<(usize, usize)> = Vec::new();
    for (f, ds) in dets.iter().enumerate() {
        for i in 0..ds.len() {
            flat.push((f, i));
        }
    }
    if total == 0 {
        return if flat.is_empty() { 1.0 } else { 0.0 };
    }
    // insertion sort by descending score, stable
    for i in 1..flat.len() {
        let mut j = i;
        while j > 0 && dets[flat[j].0][flat[j].1].score > dets[flat[j - 1].0][flat[j - 1].1].score {
            flat.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut points = Vec::new();
    for k in 1..=flat.len() {
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut tp = 0;
        for &(f, i) in &flat[..k] {
            let d = det_tuple(&dets[f][i]);
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts[f].iter().enumerate() {
                let o = corner_iou(d, gt_tuple(g));
                if best.is_none_or(|b| o > b.1) {
                    best = Some((j, o));
                }
            }
            if let Some((j, o)) = best {
                if o >= thr && !used[f][j] {
                    used[f][j] = true;
                    tp += 1;
                }
            }
        }
        points.push((tp as f64 / total as f64, tp as f64 / k as f64));
    }
    // sum over recall steps of the best precision at any recall ≥ the step
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (i, &(r, _)) in points.iter().enumerate() {
        if r > prev {
            let p = points[i..].iter().map(|q| q.1).fold(0.0, f64::max);
            ap += (r - prev) * p;
            prev = r;
        }
    }
    ap
}

/// Minimum over all labelings of `dims` into exactly three non-empty groups
/// of the mean `1 − IoU` to the group's mean extent.
pub fn exhaustive_three_partition(dims: &[(f64, f64)]) -> f64 {
    let n = dims.len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    let combos = 3usize.pow(n as u32 - 1);
    for code in 0..combos {
        // first point fixed to group 0 removes relabeling symmetry only partly; fine for ≤ 12 points
        let mut c = code;
        labels[0] = 0;
        for l in labels.iter_mut().skip(1) {
            *l = c % 3;
            c /= 3;
        }
        let mut sum = [(0.0, 0.0, 0usize); 3];
        for (i, &l) in labels.iter().enumerate() {
            sum[l].0 += dims[i].0;
            sum[l].1 += dims[i].1;
            sum[l].2 += 1;
        }
        if sum.iter().any(|s| s.2 == 0) {
            continue;
        }
        let means: Vec<(f64, f64)> = sum.iter().map(|s| (s.0 / s.2 as f64, s.1 / s.2 as f64)).collect();
        let cost: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| 1.0 - extent_iou(dims[i].0, dims[i].1, means[l].0, means[l].1))
            .sum();
        best = best.min(cost / n as f64);
    }
    best
}

fn focal(p: f64, gamma: f64, alpha: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -alpha * (1.0 - p).powf(gamma) * p.ln()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Settings the scalar loss reference needs.
pub struct LossRef {
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub noobj: f64,
    pub halved: bool,
    /// IoU objectness target when true, 1 otherwise.
    pub iou_target: bool,
}

/// Scalar-loop objective over a raw grid `[n, k·(5+c), gh, gw]` given
/// ground truths per sample, priors in cell units and the stride.
pub fn scalar_loss(
    raw: &[f64],
    n: usize,
    k: usize,
    classes: usize,
    gh: usize,
    gw: usize,
    stride: f64,
    gts: &[Vec<GroundTruthBox>],
    priors: &[AnchorPrior],
    cfg: &LossRef,
) -> f64 {
    let ch = k * (5 + classes);
    let at = |s: usize, c: usize, y: usize, x: usize| ((s * ch + c) * gh + y) * gw + x;
    let mut total = 0.0;
    for s in 0..n {
        let (assign, _) = brute_assign(&gts[s], gw, gh, stride, priors);
        let npos = assign.len();
        let mut reg = 0.0;
        let mut obj = 0.0;
        let mut cls = 0.0;
        for a in 0..k {
            for y in 0..gh {
                for x in 0..gw {
                    let base = a * (5 + classes);
                    let to = raw[at(s, base + 4, y, x)];
                    let p = sig(to);
                    let hit = assign.iter().find(|&&(_, cx, cy, an)| cx == x && cy == y && an == a);
                    let Some(&(gi, ..)) = hit else {
                        obj += cfg.noobj * focal(1.0 - p, cfg.gamma, cfg.alpha);
                        continue;
                    };
                    let g = &gts[s][gi].bbox;
                    let ox = (g.cx / stride - x as f64).clamp(1e-4, 1.0 - 1e-4);
                    let oy = (g.cy / stride - y as f64).clamp(1e-4, 1.0 - 1e-4);
                    let target = [
                        (ox / (1.0 - ox)).ln(),
                        (oy / (1.0 - oy)).ln(),
                        (g.w / stride / priors[a].w).ln(),
                        (g.h / stride / priors[a].h).ln(),
                    ];
                    let t: Vec<f64> = (0..4).map(|f| raw[at(s, base + f, y, x)]).collect();
                    for f in 0..4 {
                        let d = t[f] - target[f];
                        reg += if d.abs() < 1.0 {
                            if cfg.halved {
                                0.5 * d * d
                            } else {
                                d * d
                            }
                        } else {
                            d.abs() - 0.5
                        };
                    }
                    let yv = if cfg.iou_target {
                        let pred = (
                            sig(t[0]) + x as f64,
                            sig(t[1]) + y as f64,
                            priors[a].w * t[2].exp(),
                            priors[a].h * t[3].exp(),
                        );
                        corner_iou(pred, (g.cx / stride, g.cy / stride, g.w / stride, g.h / stride))
                    } else {
                        1.0
                    };
                    obj += yv * focal(p, cfg.gamma, cfg.alpha) + (1.0 - yv) * focal(1.0 - p, cfg.gamma, cfg.alpha);
                    if classes > 1 {
                        let logits: Vec<f64> = (0..classes).map(|c| raw[at(s, base + 5 + c, y, x)]).collect();
                        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                        let pc = (logits[gts[s][gi].class_id] - m).exp() / z;
                        cls += focal(pc, cfg.gamma, cfg.alpha);
                    }
                }
            }
        }
        total += cfg.lambda * reg / npos.max(1) as f64 + obj + cls;
    }
    total / n as f64
}
