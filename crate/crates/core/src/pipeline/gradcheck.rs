//! Finite-difference check of the composed network and training objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::GroundTruthBox;
use crate::loss::{build_targets, multi_part_loss, LossConfig, ObjectnessTarget, TargetGrid};
use crate::model::{Model, ModelConfig};
use crate::tensor::{finite_diff_check, FdConfig, FdReport, Tensor};

/// Random frames and one or two boxes per sample.
fn random_problem(model: &Model<f64>, batch: usize, rng: &mut ChaCha8Rng) -> Result<(Tensor<f64>, Vec<TargetGrid>)> {
    let c = model.config();
    let x = Tensor::from_fn(vec![batch, c.frames, c.in_channels, c.height, c.width], |_| rng.gen_range(0.0..1.0));
    let grid = model.grid();
    let mut targets = Vec::with_capacity(batch);
    for _ in 0..batch {
        let n = rng.gen_range(1..=2);
        let gts: Vec<GroundTruthBox> = (0..n)
            .map(|_| {
                let w = grid.stride * rng.gen_range(0.5..2.0);
                let h = grid.stride * rng.gen_range(0.5..2.0);
                GroundTruthBox::new(
                    rng.gen_range(0.0..c.width as f64),
                    rng.gen_range(0.0..c.height as f64),
                    w,
                    h,
                    rng.gen_range(0..c.classes),
                )
            })
            .collect();
        targets.push(build_targets(&gts, &grid, model.anchors(), c.classes)?);
    }
    Ok((x, targets))
}

/// Compares analytic gradients of `multi_part_loss ∘ model` (batch
/// statistics, every parameter and the input frames) with central
/// differences in `f64`. The objectness target is fixed at 1 because the
/// IoU target is treated as a constant by the analytic gradient.
pub fn model_gradcheck(cfg: &ModelConfig, seed: u64, fd: &FdConfig) -> Result<FdReport> {
    let model = Model::<f64>::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (x, targets) = random_problem(&model, 2, &mut rng)?;
    let loss_cfg = LossConfig {
        objectness_target: ObjectnessTarget::One,
        ..LossConfig::default()
    };

    let mut analytic_model = model.clone();
    let pass = analytic_model.forward_train(&x)?;
    let loss = multi_part_loss(pass.output(), &targets, model.anchors(), &loss_cfg)?;
    let grads = analytic_model.backward(&pass, loss.grad)?;

    let mut params: Vec<Tensor<f64>> = model.params().to_vec();
    params.push(x);
    let mut analytic = grads.params;
    analytic.push(grads.input);

    let np = model.params().len();
    finite_diff_check(
        |p| {
            let mut m = model.clone();
            m.params_mut().clone_from_slice(&p[..np]);
            let pass = m.forward_train(&p[np])?;
            Ok(multi_part_loss(pass.output(), &targets, m.anchors(), &loss_cfg)?.total)
        },
        &params,
        &analytic,
        fd,
    )
}
