//! The detection evaluator on a hand-made scene: greedy matching by score,
//! the precision/recall curve, and all-point vs 11-point AP at two IoU
//! thresholds.

use detnet::geometry::{BBox, DetectionBox, GroundTruthBox};
use detnet::pipeline::{evaluate_map_with, Interpolation};

fn det(cx: f64, cy: f64, score: f64) -> DetectionBox {
    DetectionBox {
        bbox: BBox::new(cx, cy, 10.0, 8.0),
        score,
        class_id: 0,
    }
}

fn main() -> detnet::Result<()> {
    let gts = vec![
        vec![GroundTruthBox::new(20.0, 20.0, 10.0, 8.0, 0), GroundTruthBox::new(45.0, 30.0, 10.0, 8.0, 0)],
        vec![GroundTruthBox::new(30.0, 40.0, 10.0, 8.0, 0)],
    ];
    let dets = vec![
        // a tight hit, a duplicate, and a loose hit
        vec![det(20.5, 20.0, 0.95), det(21.0, 20.5, 0.6), det(47.0, 31.0, 0.8)],
        // a false alarm above the true detection
        vec![det(5.0, 5.0, 0.9), det(30.0, 40.5, 0.7)],
    ];
    for iou in [0.5, 0.7] {
        for interp in [Interpolation::AllPoint, Interpolation::ElevenPoint] {
            let rep = evaluate_map_with(&dets, &gts, iou, interp)?;
            println!("IoU {iou} {interp:?}: AP {:.4}  tp {} fp {} fn {}", rep.map, rep.tp, rep.fp, rep.fn_);
        }
    }
    let rep = evaluate_map_with(&dets, &gts, 0.5, Interpolation::AllPoint)?;
    print!("{}", rep.pr_csv());
    Ok(())
}
