//! IoU k-means over the benchmark's box extents. Prints the mean best-prior
//! IoU for k = 1..=8. Gains flatten past five, the default prior count.

use detnet::anchors::{kmeans_anchors, KMeansConfig};
use detnet::synthvid::{build_dataset, DatasetSpec};

fn main() -> detnet::Result<()> {
    let data = build_dataset(&DatasetSpec::blur_heavy(60, 2024))?;
    let stride = 8.0;
    let dims: Vec<(f64, f64)> = data.box_dims().into_iter().map(|(w, h)| (w / stride, h / stride)).collect();
    println!("{} boxes, extents in grid cells (stride {stride})", dims.len());
    for k in 1..=8 {
        let r = kmeans_anchors(
            &dims,
            &KMeansConfig {
                k,
                ..KMeansConfig::default()
            },
        )?;
        let priors: Vec<String> = r.anchors.priors().iter().map(|p| format!("{:.2}x{:.2}", p.w, p.h)).collect();
        println!("k={k}  avg IoU {:.4}  {}", 1.0 - r.objective, priors.join(" "));
    }
    Ok(())
}
