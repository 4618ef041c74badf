mod common;

use common::LossRef;
use detnet::anchors::{AnchorPrior, AnchorSet, GridSpec};
use detnet::geometry::GroundTruthBox;
use detnet::loss::{build_targets, channel, focal_loss, multi_part_loss, FocalConfig, LossConfig, ObjectnessTarget};
use detnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Problem {
    raw: Tensor<f64>,
    gts: Vec<Vec<GroundTruthBox>>,
    anchors: AnchorSet,
    grid: GridSpec,
    classes: usize,
}

fn problem(rng: &mut ChaCha8Rng, classes: usize) -> Problem {
    let grid = GridSpec {
        width: 3,
        height: 2,
        stride: 8.0,
    };
    let anchors = AnchorSet::new(vec![AnchorPrior::new(0.8, 1.2), AnchorPrior::new(2.0, 1.0)]).unwrap();
    let n = 3;
    let gts = (0..n)
        .map(|_| {
            (0..rng.gen_range(0..4))
                .map(|_| {
                    GroundTruthBox::new(
                        rng.gen_range(0.5..23.5),
                        rng.gen_range(0.5..15.5),
                        rng.gen_range(3.0..20.0),
                        rng.gen_range(3.0..20.0),
                        rng.gen_range(0..classes),
                    )
                })
                .collect()
        })
        .collect();
    let ch = anchors.len() * (5 + classes);
    let raw = Tensor::from_fn(vec![n, ch, grid.height, grid.width], |_| rng.gen_range(-2.0..2.0));
    Problem {
        raw,
        gts,
        anchors,
        grid,
        classes,
    }
}

fn library_loss(p: &Problem, cfg: &LossConfig) -> detnet::loss::LossOutput<f64> {
    let targets: Vec<_> = p
        .gts
        .iter()
        .map(|g| build_targets(g, &p.grid, &p.anchors, p.classes).unwrap())
        .collect();
    multi_part_loss(&p.raw, &targets, &p.anchors, cfg).unwrap()
}

fn reference(p: &Problem, cfg: &LossConfig) -> f64 {
    let r = LossRef {
        lambda: cfg.lambda,
        gamma: cfg.focal.gamma,
        alpha: cfg.focal.alpha,
        noobj: cfg.noobj_weight,
        halved: cfg.smooth_l1_halved,
        iou_target: cfg.objectness_target == ObjectnessTarget::Iou,
    };
    common::scalar_loss(
        p.raw.data(),
        p.raw.shape()[0],
        p.anchors.len(),
        p.classes,
        p.grid.height,
        p.grid.width,
        p.grid.stride,
        &p.gts,
        p.anchors.priors(),
        &r,
    )
}

#[test]
fn vectorized_loss_matches_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..60 {
        let classes = [1, 2, 3][case % 3];
        let p = problem(&mut rng, classes);
        let cfg = LossConfig {
            lambda: [1.0, 5.0][case % 2],
            focal: FocalConfig {
                gamma: [0.0, 1.0, 2.0, 3.5][case % 4],
                alpha: [1.0, 0.25][(case / 4) % 2],
            },
            smooth_l1_halved: case % 5 == 0,
            objectness_target: if case % 2 == 0 { ObjectnessTarget::Iou } else { ObjectnessTarget::One },
            ..LossConfig::default()
        };
        let got = library_loss(&p, &cfg);
        let want = reference(&p, &cfg);
        assert!((got.total - want).abs() < 1e-9 * want.abs().max(1.0), "case {case}: {} vs {want}", got.total);
        let parts = got.regression + got.objectness + got.classification;
        assert!((parts - got.total).abs() < 1e-12);
    }
}

#[test]
fn lambda_scales_only_the_regression_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = problem(&mut rng, 2);
    let base = library_loss(&p, &LossConfig::default());
    let doubled = library_loss(
        &p,
        &LossConfig {
            lambda: 2.0,
            ..LossConfig::default()
        },
    );
    assert!((doubled.regression - 2.0 * base.regression).abs() < 1e-12);
    assert_eq!(doubled.objectness, base.objectness);
    assert_eq!(doubled.classification, base.classification);
}

#[test]
fn perfect_predictions_have_near_zero_loss() {
    let grid = GridSpec {
        width: 2,
        height: 2,
        stride: 8.0,
    };
    let anchors = AnchorSet::new(vec![AnchorPrior::new(1.0, 1.0), AnchorPrior::new(2.0, 1.0)]).unwrap();
    let gts = vec![GroundTruthBox::new(5.0, 11.0, 9.0, 7.0, 1), GroundTruthBox::new(12.0, 3.0, 15.0, 8.0, 0)];
    let classes = 2;
    let tg = build_targets(&gts, &grid, &anchors, classes).unwrap();
    let ch = anchors.len() * (5 + classes);
    let mut raw = Tensor::<f64>::full(vec![1, ch, 2, 2], 0.0);
    for a in 0..anchors.len() {
        for gy in 0..2 {
            for gx in 0..2 {
                raw.set(&[0, channel(a, 4, classes), gy, gx], -30.0);
            }
        }
    }
    for (a, gy, gx, st) in tg.positives() {
        for f in 0..4 {
            raw.set(&[0, channel(a, f, classes), gy, gx], st.t[f]);
        }
        raw.set(&[0, channel(a, 4, classes), gy, gx], 30.0);
        raw.set(&[0, channel(a, 5 + st.class_id, classes), gy, gx], 30.0);
    }
    assert_eq!(tg.positive_count(), 2);
    for target in [ObjectnessTarget::One, ObjectnessTarget::Iou] {
        let cfg = LossConfig {
            objectness_target: target,
            ..LossConfig::default()
        };
        let out = multi_part_loss(&raw, std::slice::from_ref(&tg), &anchors, &cfg).unwrap();
        assert!(out.total < 1e-3, "{target:?}: {}", out.total);
    }
}

#[test]
fn scenes_without_objects_stay_finite() {
    let grid = GridSpec {
        width: 4,
        height: 4,
        stride: 8.0,
    };
    let anchors = AnchorSet::new(vec![AnchorPrior::new(1.0, 1.0)]).unwrap();
    let tg = build_targets(&[], &grid, &anchors, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let raw = Tensor::from_fn(vec![1, 6, 4, 4], |_| rng.gen_range(-50.0..50.0));
    let out = multi_part_loss(&raw, &[tg], &anchors, &LossConfig::default()).unwrap();
    assert!(out.total.is_finite() && out.total >= 0.0);
    assert_eq!(out.regression, 0.0);
    assert_eq!(out.positives, 0);
    assert!(out.grad.data().iter().all(|g: &f64| g.is_finite()));
}

#[test]
fn focusing_shrinks_easy_examples_more() {
    let mut prev_ratio = f64::INFINITY;
    for p in [0.55, 0.7, 0.9, 0.99] {
        let ce = focal_loss(p, &FocalConfig::cross_entropy());
        let fl = focal_loss(p, &FocalConfig::default());
        assert!(fl < ce);
        let ratio = fl / ce;
        assert!(ratio < prev_ratio);
        prev_ratio = ratio;
    }
    // larger γ lowers the loss of any confident example
    let mut prev = f64::INFINITY;
    for gamma in [0.0, 1.0, 2.0, 3.0, 4.0] {
        let l = focal_loss(0.8, &FocalConfig { gamma, alpha: 1.0 });
        assert!(l < prev);
        prev = l;
    }
}

#[test]
fn out_of_range_class_is_rejected() {
    let grid = GridSpec {
        width: 2,
        height: 2,
        stride: 8.0,
    };
    let anchors = AnchorSet::new(vec![AnchorPrior::new(1.0, 1.0)]).unwrap();
    let err = build_targets(&[GroundTruthBox::new(4.0, 4.0, 4.0, 4.0, 3)], &grid, &anchors, 2).unwrap_err();
    assert!(err.to_string().contains("class 3"), "{err}");
}
