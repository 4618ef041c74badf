//! Objectness loss under focusing strengths γ = 0..4 (γ = 0 is plain
//! cross-entropy).
//!
//!     cargo run --release --example focal_sweep -- [seeds, e.g. 1]

use detnet::pipeline::{run_experiment, ExperimentConfig, Preset};

fn main() -> detnet::Result<()> {
    let mut cfg = ExperimentConfig::preset(Preset::FocalSweep);
    if let Some(s) = std::env::args().nth(1) {
        cfg.seeds = s.split(',').filter_map(|x| x.trim().parse().ok()).collect();
    }
    let table = run_experiment(&cfg, Some(std::path::Path::new("target/focal_sweep")))?;
    for g in &cfg.gammas {
        if let Some(m) = table.mean(&format!("gamma={g}")) {
            println!("γ={g}: mAP@0.5 {:.4}", m.map);
        }
    }
    Ok(())
}
