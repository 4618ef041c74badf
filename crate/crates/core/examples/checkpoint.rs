//! Save a model (weights, running statistics, anchors, config), load it back
//! and confirm the detections are unchanged.

use detnet::model::{Model, ModelConfig};
use detnet::Tensor;

fn main() -> detnet::Result<()> {
    let model: Model = Model::new(ModelConfig::tiny(), 42)?;
    let path = std::env::temp_dir().join("detnet_example.bin");
    model.save_checkpoint(&path)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    let back: Model = Model::load_checkpoint(&path)?;

    let x = Tensor::from_fn(vec![1, 3, 3, 64, 64], |i| ((i * 2654435761) % 997) as f32 / 997.0);
    let a = model.forward_infer(&x)?;
    let b = back.forward_infer(&x)?;
    let same = a.output().data() == b.output().data();
    println!("{} ({bytes} bytes, {} parameters): outputs identical after reload: {same}", path.display(), back.parameter_count());
    let dets = back.predict(&x, 0.3, 0.45)?;
    println!("{} detections above 0.3 from an untrained model", dets[0].len());
    std::fs::remove_file(&path).ok();
    Ok(())
}
