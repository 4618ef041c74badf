use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::{kmeans_anchors, AnchorSet, KMeansConfig};
use crate::error::{Error, Result};
use crate::loss::{build_targets, multi_part_loss, LossConfig};
use crate::model::{Model, ModelConfig};
use crate::synthvid::Dataset;
use crate::tensor::{Sgd, SgdConfig};

use super::augment::{augment, AugmentConfig};
use super::sampling::{batch_stacks, reference_pairs, sample_training_stack, ReferencePolicy};

/// Two-stage step schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decayed: f64,
    /// First epoch run at `decayed`.
    pub boundary: usize,
}

impl LrSchedule {
    /// 1e-3 for 60 epochs, then 1e-4.
    pub fn intended() -> Self {
        Self {
            initial: 1e-3,
            decayed: 1e-4,
            boundary: 60,
        }
    }

    /// The same recipe with "10e-3"/"10e-4" taken at face value.
    pub fn literal() -> Self {
        Self {
            initial: 1e-2,
            decayed: 1e-3,
            boundary: 60,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        if epoch < self.boundary {
            self.initial
        } else {
            self.decayed
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: LrSchedule,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: AugmentConfig,
    pub neighbor_range: usize,
    pub seed: u64,
    /// Samples drawn per epoch; `None` visits every reference pair once.
    pub samples_per_epoch: Option<usize>,
    pub references: ReferencePolicy,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            lr: LrSchedule::intended(),
            batch_size: 8,
            momentum: 0.9,
            weight_decay: 5e-4,
            augment: AugmentConfig::default(),
            neighbor_range: 10,
            seed: 0,
            samples_per_epoch: None,
            references: ReferencePolicy::All,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if self.lr.boundary > self.epochs {
            return Err(Error::Config(format!(
                "schedule boundary at epoch {} is past the last epoch {}",
                self.lr.boundary, self.epochs
            )));
        }
        if self.neighbor_range == 0 {
            return Err(Error::Config("neighbor range must be at least 1".into()));
        }
        self.sgd(self.lr.initial).validate()?;
        self.loss.validate()?;
        self.model.validate()
    }

    fn sgd(&self, lr: f64) -> SgdConfig {
        SgdConfig {
            learning_rate: lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
        }
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("serializable");
        hex::encode(Sha256::digest(json.as_bytes()))[..12].to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_reg: f64,
    pub loss_obj: f64,
    pub loss_cls: f64,
}

pub const METRICS_HEADER: &str = "step,epoch,lr,loss_total,loss_reg,loss_obj,loss_cls";

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.epoch, self.lr, self.loss_total, self.loss_reg, self.loss_obj, self.loss_cls
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<StepLog>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map(|l| l.loss_total).unwrap_or(f64::NAN)
    }
}

/// k-means priors fitted to the dataset's boxes, in cell units.
pub fn fit_anchors(data: &Dataset, k: usize, stride: f64, seed: u64) -> Result<AnchorSet> {
    let dims: Vec<(f64, f64)> = data.box_dims().into_iter().map(|(w, h)| (w / stride, h / stride)).collect();
    if dims.len() < k {
        return Err(Error::Data {
            context: "anchor fitting".into(),
            reason: format!("{} boxes for {k} clusters", dims.len()),
        });
    }
    let res = kmeans_anchors(
        &dims,
        &KMeansConfig {
            k,
            seed,
            ..KMeansConfig::default()
        },
    )?;
    Ok(res.anchors)
}

/// Builds a model for `cfg` with priors fitted to `data`.
pub fn build_model(cfg: &TrainConfig, data: &Dataset) -> Result<Model> {
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let anchors = fit_anchors(data, cfg.model.anchors, model.grid().stride, cfg.seed)?;
    model.set_anchors(anchors)?;
    Ok(model)
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    step: usize,
    epoch: usize,
    lr: f64,
    loss: [f64; 4],
    batch: &'a [(usize, usize)],
    param_max_abs: Vec<(String, f64)>,
    output_max_abs: f64,
}

/// SGD over reference pairs of `data`. With `out`, writes `metrics.csv`,
/// `config.json`, a checkpoint when the learning rate drops and
/// `model.bin` at the end.
pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    if model.config() != &cfg.model {
        return Err(Error::Config("model was built from a different configuration".into()));
    }
    let pairs = reference_pairs(data, cfg.references);
    if pairs.is_empty() {
        return Err(Error::Data {
            context: "training set".into(),
            reason: "no sequences".into(),
        });
    }
    let mut csv = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let cfg_path = dir.join("config.json");
            fs::write(&cfg_path, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
            let p = dir.join("metrics.csv");
            let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(&p, e))?;
            Some((p, f))
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(cfg.sgd(cfg.lr.initial))?;
    let per_epoch = cfg.samples_per_epoch.unwrap_or(pairs.len());
    let grid = model.grid();
    let classes = cfg.model.classes;
    let mut report = TrainReport {
        history: Vec::new(),
        checkpoints: Vec::new(),
    };
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at(epoch);
        opt.set_learning_rate(lr);
        if epoch == cfg.lr.boundary && epoch > 0 {
            if let Some(dir) = out {
                let p = dir.join(format!("checkpoint_epoch_{epoch:03}.bin"));
                model.save_checkpoint(&p)?;
                report.checkpoints.push(p);
            }
        }
        let mut order: Vec<(usize, usize)> = Vec::with_capacity(per_epoch);
        while order.len() < per_epoch {
            let mut round = pairs.clone();
            round.shuffle(&mut rng);
            let need = per_epoch - order.len();
            order.extend(round.into_iter().take(need));
        }
        for batch in order.chunks(cfg.batch_size) {
            let mut stacks = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &(s, t) in batch {
                let mut st = sample_training_stack(&data.sequences[s], t, cfg.neighbor_range, &mut rng)?;
                let (frames, boxes) = augment(&st.frames, &st.boxes, &mut rng, &cfg.augment);
                targets.push(build_targets(&boxes, &grid, model.anchors(), classes)?);
                st.frames = frames;
                st.boxes = boxes;
                stacks.push(st);
            }
            let x = batch_stacks(&stacks)?;
            let pass = model.forward_train(&x)?;
            let loss = multi_part_loss(pass.output(), &targets, model.anchors(), &cfg.loss)?;
            let parts = [loss.total, loss.regression, loss.objectness, loss.classification];
            if parts.iter().any(|v| !v.is_finite()) {
                let diag = Diagnostics {
                    step,
                    epoch,
                    lr,
                    loss: parts,
                    batch,
                    param_max_abs: model
                        .param_names()
                        .iter()
                        .zip(model.params())
                        .map(|(n, p)| (n.clone(), p.data().iter().fold(0.0f64, |m, v| m.max(v.abs() as f64))))
                        .collect(),
                    output_max_abs: pass.output().data().iter().fold(0.0f64, |m, v| m.max(v.abs() as f64)),
                };
                let text = serde_json::to_string_pretty(&diag)?;
                if let Some(dir) = out {
                    let p = dir.join("diagnostics.json");
                    fs::write(&p, &text).map_err(|e| Error::io(&p, e))?;
                }
                log::error!("non-finite loss at step {step}: {text}");
                return Err(Error::Numeric(format!(
                    "non-finite loss at step {step} (epoch {epoch}): total {} reg {} obj {} cls {}",
                    parts[0], parts[1], parts[2], parts[3]
                )));
            }
            let grads = model.backward(&pass, loss.grad)?;
            opt.step(model.params_mut(), &grads.params)?;
            let log = StepLog {
                step,
                epoch,
                lr,
                loss_total: parts[0],
                loss_reg: parts[1],
                loss_obj: parts[2],
                loss_cls: parts[3],
            };
            if let Some((p, f)) = csv.as_mut() {
                writeln!(f, "{}", log.csv_row()).map_err(|e| Error::io(&*p, e))?;
            }
            if step % 50 == 0 {
                log::info!("step {step} epoch {epoch} lr {lr} loss {:.5}", parts[0]);
            }
            report.history.push(log);
            step += 1;
        }
    }
    if let Some(dir) = out {
        let p = dir.join("model.bin");
        model.save_checkpoint(&p)?;
        report.checkpoints.push(p);
    }
    Ok(report)
}
