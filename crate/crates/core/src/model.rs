//! The detector network: a per-frame spatial backbone with shared weights,
//! a temporal fuser that convolves the stacked frame features down to a
//! single time step, and a fully convolutional prediction head.
//!
//! ```text
//! frames [N,T,3,H,W] ─ backbone (per frame) ─ stack [N,C,T,h,w]
//!        ─ 3×3×3 → 1×1×1 → 3×3×3 (T → 1) ─ [N,C,h,w]
//!        ─ 3×3 → 3×3 → 1×1 ─ [N, K·(5+C), h, w]
//! ```
//!
//! The 2D baseline replaces the temporal fuser with a 2D stack of matched
//! parameter count applied to the reference frame only.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorPrior, AnchorSet, GridSpec};
use crate::error::{Error, Result};
use crate::geometry::{decode, nms, DetectionBox, RawPrediction};
use crate::loss::{channel, softmax};
use crate::tensor::{
    read_checkpoint, write_checkpoint, CheckpointData, ConvSpec, Element, Graph, NamedTensor, NormMode, RunningStats,
    Tensor, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneLayer {
    pub out_channels: usize,
    /// Square kernel extent, 1 or 3; padding keeps the spatial size.
    pub kernel: usize,
    /// 2×2 max pool after this layer.
    #[serde(default)]
    pub pool: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalLayer {
    pub out_channels: usize,
    /// `[time, height, width]`.
    pub kernel: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    /// 3D convolutions across the stacked frame features.
    Conv3d,
    /// 2D stack on the reference frame only, widths matched to the 3D
    /// fuser's parameter count.
    Center2d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub backbone: Vec<BackboneLayer>,
    pub temporal: Vec<TemporalLayer>,
    pub temporal_mode: TemporalMode,
    pub head_width: usize,
    pub anchors: usize,
    pub classes: usize,
    pub norm: bool,
    pub norm_momentum: f64,
    pub leaky_slope: f64,
}

fn block(out_channels: usize, kernel: usize, pool: bool) -> BackboneLayer {
    BackboneLayer {
        out_channels,
        kernel,
        pool,
    }
}

/// `3×3×3 (pad 1,1,1) → 1×1×1 → 3×3×3 (pad 0,1,1)`: collapses 3 frames to 1.
pub fn default_temporal(channels: usize) -> Vec<TemporalLayer> {
    vec![
        TemporalLayer {
            out_channels: channels,
            kernel: [3, 3, 3],
            padding: [1, 1, 1],
        },
        TemporalLayer {
            out_channels: channels,
            kernel: [1, 1, 1],
            padding: [0, 0, 0],
        },
        TemporalLayer {
            out_channels: channels,
            kernel: [3, 3, 3],
            padding: [0, 1, 1],
        },
    ]
}

impl Default for ModelConfig {
    /// Desk-scale network on 64×64 input, stride 8.
    fn default() -> Self {
        Self {
            frames: 3,
            height: 64,
            width: 64,
            in_channels: 3,
            backbone: vec![block(16, 3, true), block(32, 3, true), block(64, 3, true), block(64, 3, false)],
            temporal: default_temporal(64),
            temporal_mode: TemporalMode::Conv3d,
            head_width: 128,
            anchors: 5,
            classes: 1,
            norm: true,
            norm_momentum: 0.1,
            leaky_slope: 0.1,
        }
    }
}

impl ModelConfig {
    /// Narrow network for fast experiments, same topology as the default.
    pub fn tiny() -> Self {
        Self {
            backbone: vec![block(8, 3, true), block(16, 3, true), block(32, 3, true), block(32, 3, false)],
            temporal: default_temporal(32),
            head_width: 64,
            ..Self::default()
        }
    }

    /// 18 convolutions and 5 max-pools of the classification backbone with
    /// its final classifier convolution removed, full-width temporal fuser
    /// and 1024-wide head.
    pub fn full_width(height: usize, width: usize) -> Self {
        let backbone = vec![
            block(32, 3, true),
            block(64, 3, true),
            block(128, 3, false),
            block(64, 1, false),
            block(128, 3, true),
            block(256, 3, false),
            block(128, 1, false),
            block(256, 3, true),
            block(512, 3, false),
            block(256, 1, false),
            block(512, 3, false),
            block(256, 1, false),
            block(512, 3, true),
            block(1024, 3, false),
            block(512, 1, false),
            block(1024, 3, false),
            block(512, 1, false),
            block(1024, 3, false),
        ];
        Self {
            height,
            width,
            backbone,
            temporal: default_temporal(1024),
            head_width: 1024,
            ..Self::default()
        }
    }

    pub fn stride(&self) -> usize {
        1 << self.backbone.iter().filter(|b| b.pool).count()
    }

    pub fn grid(&self) -> GridSpec {
        let s = self.stride();
        GridSpec {
            width: self.width / s,
            height: self.height / s,
            stride: s as f64,
        }
    }

    pub fn output_channels(&self) -> usize {
        self.anchors * (5 + self.classes)
    }

    /// Index of the reference frame within the input stack.
    pub fn reference_frame(&self) -> usize {
        self.frames / 2
    }

    fn backbone_channels(&self) -> usize {
        self.backbone.last().map(|b| b.out_channels).unwrap_or(self.in_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.frames == 0 || self.in_channels == 0 || self.anchors == 0 || self.classes == 0 || self.head_width == 0 {
            return err("frames, channels, anchors, classes and head width must be positive".into());
        }
        if self.backbone.iter().any(|b| b.out_channels == 0 || !(b.kernel == 1 || b.kernel == 3)) {
            return err("backbone layers need positive width and kernel 1 or 3".into());
        }
        let s = self.stride();
        if !self.height.is_multiple_of(s) || !self.width.is_multiple_of(s) || self.height < s || self.width < s {
            return err(format!(
                "input {}×{} is not a positive multiple of the stride {s}",
                self.height, self.width
            ));
        }
        if !(0.0..1.0).contains(&self.norm_momentum) || self.norm_momentum == 0.0 {
            return err(format!("normalization momentum must lie in (0, 1), got {}", self.norm_momentum));
        }
        if self.temporal.is_empty() {
            return err("temporal schedule is empty".into());
        }
        let grid = self.grid();
        let mut dims = [self.frames, grid.height, grid.width];
        let mut c = self.backbone_channels();
        for (i, l) in self.temporal.iter().enumerate() {
            let spec = ConvSpec::conv3d(c, l.out_channels, l.kernel, [1, 1, 1], l.padding);
            dims = spec
                .output_extents(dims)
                .map_err(|e| Error::Config(format!("temporal layer {i}: {e}")))?;
            if dims[1] != grid.height || dims[2] != grid.width {
                return err(format!("temporal layer {i} changes the spatial extent"));
            }
            c = l.out_channels;
        }
        if dims[0] != 1 {
            return err(format!(
                "temporal schedule maps {} frames to {} instead of 1",
                self.frames, dims[0]
            ));
        }
        Ok(())
    }

    /// Specs of the 2D layers standing in for the temporal fuser in the
    /// baseline: same kernels without the time axis, inner widths chosen so
    /// the parameter count is as close as possible to the 3D fuser's.
    pub fn baseline_specs(&self) -> Vec<ConvSpec> {
        let cin = self.backbone_channels();
        let target: usize = self.temporal_specs().iter().map(|s| s.parameter_count()).sum();
        let n = self.temporal.len();
        let last = self.temporal[n - 1].out_channels;
        let build = |hidden: usize| -> Vec<ConvSpec> {
            let mut c = cin;
            self.temporal
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let out = if i + 1 == n { last } else { hidden };
                    let spec = ConvSpec::conv2d(c, out, l.kernel[1], 1, l.padding[1]);
                    c = out;
                    spec
                })
                .collect()
        };
        if n == 1 {
            return build(last);
        }
        let count = |specs: &[ConvSpec]| specs.iter().map(|s| s.parameter_count()).sum::<usize>();
        let mut best = (usize::MAX, 1);
        for hidden in 1..=8 * last.max(cin) {
            let diff = count(&build(hidden)).abs_diff(target);
            if diff < best.0 {
                best = (diff, hidden);
            }
        }
        build(best.1)
    }

    fn temporal_specs(&self) -> Vec<ConvSpec> {
        let mut c = self.backbone_channels();
        self.temporal
            .iter()
            .map(|l| {
                let s = ConvSpec::conv3d(c, l.out_channels, l.kernel, [1, 1, 1], l.padding);
                c = l.out_channels;
                s
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
struct Block {
    name: String,
    spec: ConvSpec,
    weight: usize,
    bias: usize,
    /// `(scale, shift, running-stats index)`
    norm: Option<(usize, usize, usize)>,
    activate: bool,
    pool: bool,
}

/// Parameterized network. `T` is `f32` for training and `f64` for gradient
/// checks.
#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    config: ModelConfig,
    anchors: AnchorSet,
    seed: u64,
    backbone: Vec<Block>,
    temporal: Vec<Block>,
    head: Vec<Block>,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    stats_names: Vec<String>,
    running: Vec<RunningStats<T>>,
}

/// A recorded forward pass.
pub struct ForwardPass<T> {
    pub graph: Graph<T>,
    pub input: Var,
    pub output: Var,
    params: Vec<Var>,
}

impl<T: Element> ForwardPass<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.graph.value(self.output)
    }
}

/// Gradients from [`Model::backward`], parameters in [`Model::params`] order.
pub struct ModelGrads<T> {
    pub params: Vec<Tensor<T>>,
    pub input: Tensor<T>,
}

/// Evenly spaced square priors, used until k-means priors are installed.
fn placeholder_anchors(k: usize, grid: &GridSpec) -> AnchorSet {
    let span = (grid.width.min(grid.height) as f64 / 2.0).max(1.0);
    let priors = (0..k)
        .map(|i| {
            let s = 0.5 + (span - 0.5) * (i as f64 + 1.0) / k as f64;
            AnchorPrior::new(s, s)
        })
        .collect();
    AnchorSet::new(priors).expect("positive placeholder priors")
}

impl<T: Element> Model<T> {
    /// Builds and initializes a network: fan-in scaled uniform weights in
    /// `±√(2/fan_in)`, zero biases, unit norm scales.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut m = Self {
            anchors: placeholder_anchors(config.anchors, &config.grid()),
            config,
            seed,
            backbone: Vec::new(),
            temporal: Vec::new(),
            head: Vec::new(),
            names: Vec::new(),
            params: Vec::new(),
            stats_names: Vec::new(),
            running: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = m.config.clone();
        let rank_2d = 2;

        let mut c = cfg.in_channels;
        for (i, l) in cfg.backbone.iter().enumerate() {
            let spec = ConvSpec::conv2d(c, l.out_channels, l.kernel, 1, l.kernel / 2);
            let b = m.add_block(format!("backbone.{i}"), spec, rank_2d, cfg.norm, true, l.pool, &mut rng);
            m.backbone.push(b);
            c = l.out_channels;
        }
        match cfg.temporal_mode {
            TemporalMode::Conv3d => {
                for (i, spec) in cfg.temporal_specs().into_iter().enumerate() {
                    let b = m.add_block(format!("temporal.{i}"), spec, 3, cfg.norm, true, false, &mut rng);
                    m.temporal.push(b);
                }
            }
            TemporalMode::Center2d => {
                for (i, spec) in cfg.baseline_specs().into_iter().enumerate() {
                    let b = m.add_block(format!("temporal.{i}"), spec, rank_2d, cfg.norm, true, false, &mut rng);
                    m.temporal.push(b);
                }
            }
        }
        c = cfg.temporal.last().expect("validated").out_channels;
        let hw = cfg.head_width;
        let head = [
            (ConvSpec::conv2d(c, hw, 3, 1, 1), true),
            (ConvSpec::conv2d(hw, hw, 3, 1, 1), true),
            (ConvSpec::conv2d(hw, cfg.output_channels(), 1, 1, 0), false),
        ];
        for (i, (spec, hidden)) in head.into_iter().enumerate() {
            let b = m.add_block(format!("head.{i}"), spec, rank_2d, hidden && cfg.norm, hidden, false, &mut rng);
            m.head.push(b);
        }
        Ok(m)
    }

    #[allow(clippy::too_many_arguments)]
    fn add_block(
        &mut self,
        name: String,
        spec: ConvSpec,
        rank: usize,
        norm: bool,
        activate: bool,
        pool: bool,
        rng: &mut ChaCha8Rng,
    ) -> Block {
        let bound = (2.0 / spec.taps() as f64).sqrt();
        let weight = self.push_param(format!("{name}.weight"), Tensor::uniform(spec.weight_shape(rank), bound, rng));
        let bias = self.push_param(format!("{name}.bias"), Tensor::zeros(vec![spec.out_channels]));
        let norm = norm.then(|| {
            let scale = self.push_param(format!("{name}.norm.scale"), Tensor::full(vec![spec.out_channels], T::one()));
            let shift = self.push_param(format!("{name}.norm.shift"), Tensor::zeros(vec![spec.out_channels]));
            self.stats_names.push(format!("{name}.norm"));
            self.running.push(RunningStats::new(spec.out_channels));
            (scale, shift, self.running.len() - 1)
        });
        Block {
            name,
            spec,
            weight,
            bias,
            norm,
            activate,
            pool,
        }
    }

    fn push_param(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn set_anchors(&mut self, anchors: AnchorSet) -> Result<()> {
        if anchors.len() != self.config.anchors {
            return Err(Error::Config(format!(
                "model predicts {} anchors per cell, got {} priors",
                self.config.anchors,
                anchors.len()
            )));
        }
        self.anchors = anchors;
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        self.config.grid()
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.running
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Parameters of the temporal stage only.
    pub fn temporal_parameter_count(&self) -> usize {
        self.temporal
            .iter()
            .map(|b| {
                let norm = b.norm.map(|(s, h, _)| self.params[s].len() + self.params[h].len()).unwrap_or(0);
                self.params[b.weight].len() + self.params[b.bias].len() + norm
            })
            .sum()
    }

    /// Same network in another precision.
    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            anchors: self.anchors.clone(),
            seed: self.seed,
            backbone: self.backbone.clone(),
            temporal: self.temporal.clone(),
            head: self.head.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            stats_names: self.stats_names.clone(),
            running: self
                .running
                .iter()
                .map(|r| RunningStats {
                    mean: r.mean.cast(),
                    var: r.var.cast(),
                })
                .collect(),
        }
    }

    /// Forward with batch statistics; folds them into the running stats.
    pub fn forward_train(&mut self, frames: &Tensor<T>) -> Result<ForwardPass<T>> {
        let mut stats = std::mem::take(&mut self.running);
        let pass = self.run(frames, Some(&mut stats));
        self.running = stats;
        pass
    }

    /// Forward with running statistics.
    pub fn forward_infer(&self, frames: &Tensor<T>) -> Result<ForwardPass<T>> {
        self.run(frames, None)
    }

    fn run(&self, frames: &Tensor<T>, mut train_stats: Option<&mut Vec<RunningStats<T>>>) -> Result<ForwardPass<T>> {
        let cfg = &self.config;
        let expected = [cfg.frames, cfg.in_channels, cfg.height, cfg.width];
        let [n, t, c, h, w] = match *frames.shape() {
            [n, t, c, h, w] => [n, t, c, h, w],
            _ => return Err(Error::shape("forward", "rank", 5, frames.rank())),
        };
        for (axis, (&got, &want)) in ["time", "channel", "height", "width"].iter().zip([t, c, h, w].iter().zip(&expected)) {
            if got != want {
                return Err(Error::shape("forward", *axis, want, got));
            }
        }

        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.param(p.clone())).collect();
        let input = g.input(frames.clone());

        let mut x = match cfg.temporal_mode {
            TemporalMode::Conv3d => g.reshape(input, &[n * t, c, h, w])?,
            TemporalMode::Center2d => {
                let v = g.swap_axes_1_2(input)?; // [N, C, T, H, W]
                g.select_time(v, cfg.reference_frame())?
            }
        };
        for b in &self.backbone {
            x = self.apply_block(&mut g, &params, b, x, &mut train_stats)?;
        }
        if cfg.temporal_mode == TemporalMode::Conv3d {
            let s = g.value(x).shape().to_vec();
            x = g.reshape(x, &[n, t, s[1], s[2], s[3]])?;
            x = g.swap_axes_1_2(x)?;
        }
        for b in &self.temporal {
            x = self.apply_block(&mut g, &params, b, x, &mut train_stats)?;
        }
        if cfg.temporal_mode == TemporalMode::Conv3d {
            x = g.select_time(x, 0)?;
        }
        for b in &self.head {
            x = self.apply_block(&mut g, &params, b, x, &mut train_stats)?;
        }
        Ok(ForwardPass {
            graph: g,
            input,
            output: x,
            params,
        })
    }

    fn apply_block(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        b: &Block,
        x: Var,
        train_stats: &mut Option<&mut Vec<RunningStats<T>>>,
    ) -> Result<Var> {
        let mut y = g
            .conv(x, params[b.weight], params[b.bias], &b.spec)
            .map_err(|e| Error::Config(format!("layer {}: {e}", b.name)))?;
        if let Some((scale, shift, si)) = b.norm {
            let mode = match train_stats {
                Some(stats) => NormMode::Train {
                    stats: &mut stats[si],
                    momentum: self.config.norm_momentum,
                },
                None => NormMode::Infer(&self.running[si]),
            };
            y = g.channel_norm(y, params[scale], params[shift], mode)?;
        }
        if b.activate {
            y = g.leaky_relu(y, self.config.leaky_slope);
        }
        if b.pool {
            y = g.max_pool2d(y)?;
        }
        Ok(y)
    }

    /// Back-propagates `grad_output` (gradient of the objective with respect
    /// to the prediction grid) to every parameter and to the input frames.
    pub fn backward(&self, pass: &ForwardPass<T>, grad_output: Tensor<T>) -> Result<ModelGrads<T>> {
        let mut grads = pass.graph.backward(pass.output, grad_output)?;
        let params = pass
            .params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
            .collect();
        let input = grads
            .take(pass.input)
            .unwrap_or_else(|| Tensor::zeros(pass.graph.value(pass.input).shape().to_vec()));
        Ok(ModelGrads { params, input })
    }

    /// Decodes every `(cell, anchor)` slot of each batch item, keeps those
    /// scoring at least `score_threshold` and suppresses overlaps.
    pub fn predict(&self, frames: &Tensor<T>, score_threshold: f64, nms_threshold: f64) -> Result<Vec<Vec<DetectionBox>>> {
        let pass = self.forward_infer(frames)?;
        Ok(decode_grid(pass.output(), &self.anchors, &self.grid(), self.config.classes)
            .into_iter()
            .map(|dets| nms(&dets, nms_threshold, score_threshold))
            .collect())
    }

    fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = self
            .names
            .iter()
            .zip(&self.params)
            .map(|(n, p)| NamedTensor {
                name: n.clone(),
                tensor: p.cast(),
            })
            .collect();
        for (n, r) in self.stats_names.iter().zip(&self.running) {
            out.push(NamedTensor {
                name: format!("{n}.running_mean"),
                tensor: r.mean.cast(),
            });
            out.push(NamedTensor {
                name: format!("{n}.running_var"),
                tensor: r.var.cast(),
            });
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "model": self.config,
            "anchors": self.anchors,
            "seed": self.seed,
            "norm": {
                "enabled": self.config.norm,
                "momentum": self.config.norm_momentum,
                "layers": self.stats_names,
            },
        });
        write_checkpoint(
            path,
            &CheckpointData {
                meta,
                tensors: self.named_tensors(),
            },
        )
    }

    /// Rebuilds a model from the configuration stored in a checkpoint.
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let data = read_checkpoint(path)?;
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let config: ModelConfig =
            serde_json::from_value(data.meta["model"].clone()).map_err(|e| bad(format!("model config: {e}")))?;
        let seed = data.meta["seed"].as_u64().ok_or_else(|| bad("missing seed".into()))?;
        let anchors: AnchorSet =
            serde_json::from_value(data.meta["anchors"].clone()).map_err(|e| bad(format!("anchors: {e}")))?;
        let mut m = Self::new(config, seed)?;
        m.set_anchors(anchors)?;
        m.assign_tensors(path, data.tensors)?;
        Ok(m)
    }

    /// Loads weights into this model, requiring identical layer names and
    /// shapes.
    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let data = read_checkpoint(path)?;
        self.assign_tensors(path, data.tensors)
    }

    fn assign_tensors(&mut self, path: &Path, tensors: Vec<NamedTensor>) -> Result<()> {
        let expected = self.named_tensors();
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if tensors.len() != expected.len() {
            let first_diff = expected
                .iter()
                .zip(&tensors)
                .find(|(e, t)| e.name != t.name || e.tensor.shape() != t.tensor.shape())
                .map(|(e, _)| e.name.clone())
                .unwrap_or_else(|| "<end of list>".into());
            return Err(bad(format!(
                "layer count mismatch: model has {} tensors, checkpoint {} (first difference at {first_diff})",
                expected.len(),
                tensors.len()
            )));
        }
        for (e, t) in expected.iter().zip(&tensors) {
            if e.name != t.name || e.tensor.shape() != t.tensor.shape() {
                return Err(bad(format!(
                    "shape mismatch at layer {}: model expects {} {}, checkpoint has {} {}",
                    e.name,
                    e.name,
                    crate::tensor::fmt_shape(e.tensor.shape()),
                    t.name,
                    crate::tensor::fmt_shape(t.tensor.shape())
                )));
            }
        }
        let np = self.params.len();
        let mut it = tensors.into_iter();
        for p in self.params.iter_mut() {
            *p = it.next().expect("length checked").tensor.cast();
        }
        for r in self.running.iter_mut() {
            r.mean = it.next().expect("length checked").tensor.cast();
            r.var = it.next().expect("length checked").tensor.cast();
        }
        debug_assert_eq!(np, self.params.len());
        Ok(())
    }
}

/// Decodes all slots of a `[N, K·(5+C), H, W]` prediction grid to pixel
/// boxes. Class is the argmax of the class logits.
pub fn decode_grid<T: Element>(raw: &Tensor<T>, anchors: &AnchorSet, grid: &GridSpec, classes: usize) -> Vec<Vec<DetectionBox>> {
    let s = raw.shape();
    let (n, gh, gw) = (s[0], s[2], s[3]);
    let k = anchors.len();
    let mut out = Vec::with_capacity(n);
    let mut logits = vec![0.0; classes];
    for b in 0..n {
        let mut dets = Vec::with_capacity(k * gh * gw);
        for a in 0..k {
            for gy in 0..gh {
                for gx in 0..gw {
                    let v = |f: usize| raw.get(&[b, channel(a, f, classes), gy, gx]).to_f64();
                    let r = RawPrediction {
                        tx: v(0),
                        ty: v(1),
                        tw: v(2),
                        th: v(3),
                        to: v(4),
                        cell: (gx, gy),
                        anchor_index: a,
                    };
                    let mut d = decode(&r, anchors.get(a), grid.stride);
                    if classes > 1 {
                        for (c, l) in logits.iter_mut().enumerate() {
                            *l = v(5 + c);
                        }
                        let p = softmax(&logits);
                        d.class_id = (0..classes).fold(0, |best, c| if p[c] > p[best] { c } else { best });
                    }
                    dets.push(d);
                }
            }
        }
        out.push(dets);
    }
    out
}
