//! Anchor priors from k-means over ground-truth extents, and the rule that
//! makes exactly one `(cell, anchor)` slot responsible for each object.
//!
//! Clustering uses `d = 1 − shape_iou` so that large and small boxes weigh
//! equally. Each Lloyd update moves a centroid to its members' mean extent
//! only when that does not raise the cluster cost, which keeps the
//! objective non-increasing under the IoU distance.

use std::collections::HashSet;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{shape_iou, GroundTruthBox};

/// Prior `(width, height)` in grid-cell units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrior {
    pub w: f64,
    pub h: f64,
}

impl AnchorPrior {
    pub fn new(w: f64, h: f64) -> Self {
        Self { w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Priors in canonical order: ascending area, ties by width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AnchorPrior>", into = "Vec<AnchorPrior>")]
pub struct AnchorSet {
    priors: Vec<AnchorPrior>,
}

impl AnchorSet {
    pub fn new(mut priors: Vec<AnchorPrior>) -> Result<Self> {
        if priors.is_empty() {
            return Err(Error::Config("anchor set needs at least one prior".into()));
        }
        if let Some(p) = priors.iter().find(|p| !(p.w > 0.0 && p.h > 0.0)) {
            return Err(Error::Config(format!("anchor prior extents must be positive, got {p:?}")));
        }
        priors.sort_by(|a, b| a.area().total_cmp(&b.area()).then(a.w.total_cmp(&b.w)));
        Ok(Self { priors })
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    pub fn priors(&self) -> &[AnchorPrior] {
        &self.priors
    }

    pub fn get(&self, i: usize) -> &AnchorPrior {
        &self.priors[i]
    }

    /// Anchor indices by descending shape-IoU with `(w, h)` (cell units),
    /// ties broken by lower index.
    pub fn preference(&self, w: f64, h: f64) -> Vec<usize> {
        let ious: Vec<f64> = self.priors.iter().map(|p| shape_iou(w, h, p.w, p.h)).collect();
        let mut order: Vec<usize> = (0..self.priors.len()).collect();
        order.sort_by(|&a, &b| ious[b].total_cmp(&ious[a]).then(a.cmp(&b)));
        order
    }
}

impl TryFrom<Vec<AnchorPrior>> for AnchorSet {
    type Error = Error;
    fn try_from(v: Vec<AnchorPrior>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AnchorSet> for Vec<AnchorPrior> {
    fn from(s: AnchorSet) -> Self {
        s.priors
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Independent initializations; the lowest final objective wins.
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            max_iters: 300,
            restarts: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub anchors: AnchorSet,
    /// Mean `1 − IoU` of every box to its assigned prior.
    pub objective: f64,
    /// Objective after each assignment step, one list per restart.
    pub history: Vec<Vec<f64>>,
}

fn distance(p: (f64, f64), c: (f64, f64)) -> f64 {
    1.0 - shape_iou(p.0, p.1, c.0, c.1)
}

fn nearest(p: (f64, f64), centroids: &[(f64, f64)]) -> (usize, f64) {
    let mut best = (0, distance(p, centroids[0]));
    for (j, &c) in centroids.iter().enumerate().skip(1) {
        let d = distance(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Mean shape-IoU distance of `dims` to their nearest centroid.
pub fn kmeans_objective(dims: &[(f64, f64)], centroids: &[(f64, f64)]) -> f64 {
    dims.iter().map(|&p| nearest(p, centroids).1).sum::<f64>() / dims.len() as f64
}

/// Clusters box extents into `cfg.k` anchor priors.
pub fn kmeans_anchors(dims: &[(f64, f64)], cfg: &KMeansConfig) -> Result<KMeansResult> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument {
            arg: "dims",
            reason: "no box extents to cluster".into(),
        });
    }
    if let Some(d) = dims.iter().find(|d| !(d.0 > 0.0 && d.1 > 0.0)) {
        return Err(Error::InvalidArgument {
            arg: "dims",
            reason: format!("extents must be positive, got {d:?}"),
        });
    }
    let distinct: HashSet<(u64, u64)> = dims.iter().map(|d| (d.0.to_bits(), d.1.to_bits())).collect();
    if cfg.k == 0 || cfg.k > distinct.len() {
        return Err(Error::InvalidArgument {
            arg: "k",
            reason: format!("k = {} but only {} distinct extents", cfg.k, distinct.len()),
        });
    }

    let mut best: Option<(f64, Vec<(f64, f64)>)> = None;
    let mut history = Vec::with_capacity(cfg.restarts.max(1));
    for restart in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (centroids, objective, hist) = lloyd(dims, cfg.k, cfg.max_iters, &mut rng);
        history.push(hist);
        if best.as_ref().is_none_or(|(o, _)| objective < *o) {
            best = Some((objective, centroids));
        }
    }
    let (objective, centroids) = best.expect("at least one restart");
    let anchors = AnchorSet::new(centroids.into_iter().map(|(w, h)| AnchorPrior::new(w, h)).collect())?;
    Ok(KMeansResult {
        anchors,
        objective,
        history,
    })
}

fn farthest_point_init(dims: &[(f64, f64)], k: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let mut centroids = vec![dims[rng.gen_range(0..dims.len())]];
    while centroids.len() < k {
        let mut pick = 0;
        let mut pick_d = -1.0;
        for (i, &p) in dims.iter().enumerate() {
            let d = nearest(p, &centroids).1;
            if d > pick_d {
                pick = i;
                pick_d = d;
            }
        }
        centroids.push(dims[pick]);
    }
    centroids
}

fn lloyd(dims: &[(f64, f64)], k: usize, max_iters: usize, rng: &mut impl Rng) -> (Vec<(f64, f64)>, f64, Vec<f64>) {
    let mut centroids = farthest_point_init(dims, k, rng);
    let mut assign: Vec<usize> = vec![usize::MAX; dims.len()];
    let mut history = Vec::new();

    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut dist = vec![0.0; dims.len()];
        for (i, &p) in dims.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            changed |= assign[i] != j;
            assign[i] = j;
            dist[i] = d;
        }
        history.push(dist.iter().sum::<f64>() / dims.len() as f64);
        if !changed {
            break;
        }

        let mut reseeded: HashSet<usize> = HashSet::new();
        for (j, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..dims.len()).filter(|&i| assign[i] == j).collect();
            if members.is_empty() {
                let far = (0..dims.len())
                    .filter(|i| !reseeded.contains(i))
                    .fold(None::<usize>, |acc, i| match acc {
                        Some(a) if dist[a] >= dist[i] => Some(a),
                        _ => Some(i),
                    });
                if let Some(i) = far {
                    reseeded.insert(i);
                    *centroid = dims[i];
                }
                continue;
            }
            let n = members.len() as f64;
            let mean = (
                members.iter().map(|&i| dims[i].0).sum::<f64>() / n,
                members.iter().map(|&i| dims[i].1).sum::<f64>() / n,
            );
            let cost = |c: (f64, f64)| members.iter().map(|&i| distance(dims[i], c)).sum::<f64>();
            if cost(mean) <= cost(*centroid) {
                *centroid = mean;
            }
        }
    }
    let objective = *history.last().expect("at least one iteration");
    (centroids, objective, history)
}

/// Grid geometry of the prediction head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cells along x.
    pub width: usize,
    /// Cells along y.
    pub height: usize,
    /// Pixels per cell.
    pub stride: f64,
}

impl GridSpec {
    /// Cell containing pixel position `(x, y)`; the far frame edge belongs to
    /// the last cell.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (fw, fh) = (self.width as f64 * self.stride, self.height as f64 * self.stride);
        if !(0.0..=fw).contains(&x) || !(0.0..=fh).contains(&y) {
            return None;
        }
        let cx = ((x / self.stride).floor() as usize).min(self.width - 1);
        let cy = ((y / self.stride).floor() as usize).min(self.height - 1);
        Some((cx, cy))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub gt_index: usize,
    pub cell: (usize, usize),
    pub anchor_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssignmentMap {
    /// Ordered by `gt_index`.
    pub assignments: Vec<Assignment>,
    /// Ground truths that found every anchor of their cell taken.
    pub dropped: Vec<usize>,
}

/// Maps each ground truth to the cell containing its center and its best
/// free anchor by shape-IoU. Larger boxes claim first (ties by index); a
/// box whose preferred slot is taken falls back to its next-best anchor.
pub fn assign_responsible(gts: &[GroundTruthBox], grid: &GridSpec, anchors: &AnchorSet) -> Result<AssignmentMap> {
    let mut order: Vec<usize> = (0..gts.len()).collect();
    order.sort_by(|&a, &b| gts[b].bbox.area().total_cmp(&gts[a].bbox.area()).then(a.cmp(&b)));
    let mut taken: HashSet<(usize, usize, usize)> = HashSet::new();
    let mut map = AssignmentMap::default();
    for gi in order {
        let b = &gts[gi].bbox;
        let cell = grid.cell_of(b.cx, b.cy).ok_or_else(|| Error::Data {
            context: "assign_responsible".into(),
            reason: format!("ground truth {gi} center ({}, {}) lies outside the frame", b.cx, b.cy),
        })?;
        let pref = anchors.preference(b.w / grid.stride, b.h / grid.stride);
        match pref.into_iter().find(|&a| !taken.contains(&(cell.0, cell.1, a))) {
            Some(a) => {
                taken.insert((cell.0, cell.1, a));
                map.assignments.push(Assignment {
                    gt_index: gi,
                    cell,
                    anchor_index: a,
                });
            }
            None => {
                warn!("dropping ground truth {gi}: all {} anchors of cell {cell:?} are taken", anchors.len());
                map.dropped.push(gi);
            }
        }
    }
    map.assignments.sort_by_key(|a| a.gt_index);
    map.dropped.sort_unstable();
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize, seed: u64) -> KMeansConfig {
        KMeansConfig {
            k,
            seed,
            max_iters: 100,
            restarts: 4,
        }
    }

    #[test]
    fn identical_boxes_single_prior() {
        let dims = vec![(3.0, 2.0); 7];
        let r = kmeans_anchors(&dims, &cfg(1, 1)).unwrap();
        assert_eq!(r.anchors.priors(), &[AnchorPrior::new(3.0, 2.0)]);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn separated_clusters() {
        let mut dims = vec![(1.0, 1.0); 10];
        dims.extend(vec![(8.0, 8.0); 10]);
        let r = kmeans_anchors(&dims, &cfg(2, 3)).unwrap();
        assert_eq!(r.anchors.priors(), &[AnchorPrior::new(1.0, 1.0), AnchorPrior::new(8.0, 8.0)]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(kmeans_anchors(&[], &cfg(1, 0)).is_err());
        assert!(kmeans_anchors(&[(1.0, 1.0), (1.0, 1.0)], &cfg(2, 0)).is_err());
        assert!(kmeans_anchors(&[(1.0, 0.0)], &cfg(1, 0)).is_err());
    }

    #[test]
    fn anchor_set_is_canonical() {
        let s = AnchorSet::new(vec![AnchorPrior::new(4.0, 4.0), AnchorPrior::new(1.0, 2.0), AnchorPrior::new(2.0, 1.0)]).unwrap();
        assert_eq!(s.priors()[0], AnchorPrior::new(1.0, 2.0));
        assert_eq!(s.priors()[1], AnchorPrior::new(2.0, 1.0));
        assert_eq!(s.priors()[2], AnchorPrior::new(4.0, 4.0));
        assert!(AnchorSet::new(vec![AnchorPrior::new(0.0, 1.0)]).is_err());
    }

    fn anchors3() -> AnchorSet {
        AnchorSet::new(vec![AnchorPrior::new(0.5, 0.5), AnchorPrior::new(1.0, 2.0), AnchorPrior::new(2.0, 2.0)]).unwrap()
    }

    #[test]
    fn exact_shape_match_and_floor_cell() {
        let grid = GridSpec {
            width: 8,
            height: 8,
            stride: 8.0,
        };
        let gts = vec![GroundTruthBox::new(17.0, 5.0, 16.0, 16.0, 0)];
        let m = assign_responsible(&gts, &grid, &anchors3()).unwrap();
        assert_eq!(
            m.assignments,
            vec![Assignment {
                gt_index: 0,
                cell: (2, 0),
                anchor_index: 2
            }]
        );
    }

    #[test]
    fn conflicts_fall_back_then_drop() {
        let grid = GridSpec {
            width: 4,
            height: 4,
            stride: 8.0,
        };
        let gts: Vec<_> = [14.0, 16.0, 15.0, 15.5]
            .iter()
            .map(|&s| GroundTruthBox::new(12.0, 12.0, s, s, 0))
            .collect();
        let m = assign_responsible(&gts, &grid, &anchors3()).unwrap();
        // claim order by area: gt1 → anchor 2, gt3 → 1, gt2 → 0, gt0 finds the cell full
        assert_eq!(m.dropped, vec![0]);
        let anchors: Vec<(usize, usize)> = m.assignments.iter().map(|a| (a.gt_index, a.anchor_index)).collect();
        assert_eq!(anchors, vec![(1, 2), (2, 0), (3, 1)]);
    }

    #[test]
    fn outside_center_is_an_error() {
        let grid = GridSpec {
            width: 2,
            height: 2,
            stride: 8.0,
        };
        let gts = vec![GroundTruthBox::new(-1.0, 3.0, 2.0, 2.0, 0)];
        assert!(assign_responsible(&gts, &grid, &anchors3()).is_err());
        let edge = vec![GroundTruthBox::new(16.0, 16.0, 2.0, 2.0, 0)];
        assert_eq!(assign_responsible(&edge, &grid, &anchors3()).unwrap().assignments[0].cell, (1, 1));
    }
}
