//! 3D temporal fusion vs a 2D fuser that sees only the reference frame, on
//! the blur-heavy mix, reported per scenario.
//!
//!     cargo run --release --example ablation -- [seeds, e.g. 1,2,3]
//!
//! One seed takes several minutes on one core.

use detnet::pipeline::{run_experiment, ExperimentConfig, Preset};

fn main() -> detnet::Result<()> {
    let mut cfg = ExperimentConfig::preset(Preset::Ablation2dVs3d);
    if let Some(s) = std::env::args().nth(1) {
        cfg.seeds = s.split(',').filter_map(|x| x.trim().parse().ok()).collect();
    }
    let out = std::path::PathBuf::from("target/ablation");
    let table = run_experiment(&cfg, Some(&out))?;
    print!("{}", table.to_csv());
    if let (Some(a), Some(b)) = (table.mean("3d"), table.mean("2d")) {
        println!("3D - 2D: {:+.2} mAP points", 100.0 * (a.map - b.map));
    }
    Ok(())
}
