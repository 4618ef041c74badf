//! Finite-difference check of the hand-written backward pass, through the
//! whole detector and the multi-part loss, for both temporal modes.

use detnet::model::{default_temporal, BackboneLayer, ModelConfig, TemporalMode};
use detnet::pipeline::model_gradcheck;
use detnet::tensor::FdConfig;

fn main() -> detnet::Result<()> {
    for mode in [TemporalMode::Conv3d, TemporalMode::Center2d] {
        let cfg = ModelConfig {
            height: 16,
            width: 16,
            backbone: vec![
                BackboneLayer {
                    out_channels: 4,
                    kernel: 3,
                    pool: true,
                },
                BackboneLayer {
                    out_channels: 6,
                    kernel: 3,
                    pool: true,
                },
            ],
            temporal: default_temporal(6),
            temporal_mode: mode,
            head_width: 6,
            anchors: 2,
            classes: 2,
            ..ModelConfig::default()
        };
        let rep = model_gradcheck(&cfg, 0, &FdConfig::default())?;
        println!(
            "{mode:?}: max relative error {:.2e} over {} coordinates, {} kinks skipped, worst {:?}",
            rep.max_rel_error, rep.checked, rep.skipped_kinks, rep.worst
        );
    }
    Ok(())
}
