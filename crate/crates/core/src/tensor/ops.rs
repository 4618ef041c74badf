//! Pooling, pointwise activations and per-channel normalization.

use super::conv::volume_dims;
use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const NORM_EPSILON: f64 = 1e-5;

/// 2×2 max pooling with stride 2 over the last two axes of a 4D tensor.
pub fn maxpool2d<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    maxpool2d_with_argmax(input).map(|(t, _)| t)
}

/// Also returns, per output element, the flat input offset of the maximum.
/// Ties resolve to the first element in row-major window order.
pub(crate) fn maxpool2d_with_argmax<T: Element>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = match *input.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(Error::shape("maxpool2d", "rank", 4, input.rank())),
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "maxpool2d needs even spatial extents, got {h}×{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, arg))
}

pub(crate) fn maxpool2d_backward<T: Element>(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = Tensor::zeros(input_shape.to_vec());
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        gd[i as usize] = gd[i as usize] + v;
    }
    g
}

/// `x` for `x ≥ 0`, `slope·x` otherwise.
pub fn leaky_relu<T: Element>(input: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::from_f64(slope);
    input.map(|v| if v >= T::zero() { v } else { s * v })
}

pub(crate) fn leaky_relu_backward<T: Element>(input: &Tensor<T>, slope: f64, grad_out: &Tensor<T>) -> Tensor<T> {
    let s = T::from_f64(slope);
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x >= T::zero() { g } else { s * g })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

#[inline]
pub fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Elementwise `1 / (1 + e^{−x})`.
pub fn logistic<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid)
}

pub(crate) fn logistic_backward<T: Element>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * y * (T::one() - y))
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("shape preserved")
}

/// Learned per-channel affine parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams<T = f32> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
}

/// Exponential moving averages of batch statistics used at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::full(vec![channels], T::one()),
        }
    }
}

pub enum NormMode<'a, T> {
    /// Normalize with batch statistics and fold them into `stats` with the
    /// given momentum.
    Train {
        stats: &'a mut RunningStats<T>,
        momentum: f64,
    },
    Infer(&'a RunningStats<T>),
}

pub(crate) struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub train: bool,
}

pub(crate) fn channel_norm_forward<T: Element>(
    input: &Tensor<T>,
    params: &NormParams<T>,
    mode: NormMode<'_, T>,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let (n, c, dims) = volume_dims("channel_norm", input.shape())?;
    if params.scale.shape() != [c] || params.shift.shape() != [c] {
        return Err(Error::shape("channel_norm", "channel", c, params.scale.len()));
    }
    let plane: usize = dims.iter().product();
    let count = n * plane;
    let x = input.data();
    let channel_values = |ch: usize| (0..n).flat_map(move |s| (s * c + ch) * plane..(s * c + ch + 1) * plane);

    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    let train = matches!(mode, NormMode::Train { .. });
    match mode {
        NormMode::Train { stats, momentum } => {
            if stats.mean.shape() != [c] {
                return Err(Error::shape("channel_norm", "running stats", c, stats.mean.len()));
            }
            for ch in 0..c {
                let m = channel_values(ch).map(|i| x[i].to_f64()).sum::<f64>() / count as f64;
                let v = channel_values(ch)
                    .map(|i| {
                        let d = x[i].to_f64() - m;
                        d * d
                    })
                    .sum::<f64>()
                    / count as f64;
                mean[ch] = m;
                var[ch] = v;
                let unbiased = if count > 1 { v * count as f64 / (count - 1) as f64 } else { v };
                let rm = &mut stats.mean.data_mut()[ch];
                *rm = T::from_f64((1.0 - momentum) * rm.to_f64() + momentum * m);
                let rv = &mut stats.var.data_mut()[ch];
                *rv = T::from_f64((1.0 - momentum) * rv.to_f64() + momentum * unbiased);
            }
        }
        NormMode::Infer(stats) => {
            if stats.mean.shape() != [c] {
                return Err(Error::shape("channel_norm", "running stats", c, stats.mean.len()));
            }
            for ch in 0..c {
                mean[ch] = stats.mean.data()[ch].to_f64();
                var[ch] = stats.var.data()[ch].to_f64();
            }
        }
    }

    let inv_std: Vec<T> = var.iter().map(|&v| T::from_f64(1.0 / (v + NORM_EPSILON).sqrt())).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for ch in 0..c {
        let m = T::from_f64(mean[ch]);
        let (g, b) = (params.scale.data()[ch], params.shift.data()[ch]);
        for i in channel_values(ch) {
            let h = (x[i] - m) * inv_std[ch];
            xhat[i] = h;
            y[i] = g * h + b;
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), y)?,
        NormCache { xhat, inv_std, train },
    ))
}

/// Returns gradients for `(input, scale, shift)`.
pub(crate) fn channel_norm_backward<T: Element>(
    shape: &[usize],
    params: &NormParams<T>,
    cache: &NormCache<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, dims) = volume_dims("channel_norm", shape).expect("validated in forward");
    let plane: usize = dims.iter().product();
    let count = T::from_f64((n * plane) as f64);
    let gy = grad_out.data();
    let mut gx = vec![T::zero(); gy.len()];
    let mut gscale = vec![T::zero(); c];
    let mut gshift = vec![T::zero(); c];
    for ch in 0..c {
        let idx = || (0..n).flat_map(move |s| (s * c + ch) * plane..(s * c + ch + 1) * plane);
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for i in idx() {
            sum_g = sum_g + gy[i];
            sum_gx = sum_gx + gy[i] * cache.xhat[i];
        }
        gscale[ch] = sum_gx;
        gshift[ch] = sum_g;
        let k = params.scale.data()[ch] * cache.inv_std[ch];
        if cache.train {
            for i in idx() {
                gx[i] = k / count * (count * gy[i] - sum_g - cache.xhat[i] * sum_gx);
            }
        } else {
            for i in idx() {
                gx[i] = k * gy[i];
            }
        }
    }
    (
        Tensor::new(shape.to_vec(), gx).expect("shape preserved"),
        Tensor::new(vec![c], gscale).expect("shape preserved"),
        Tensor::new(vec![c], gshift).expect("shape preserved"),
    )
}

/// Per-channel normalization followed by a learned scale and shift.
pub fn channel_norm<T: Element>(input: &Tensor<T>, params: &NormParams<T>, mode: NormMode<'_, T>) -> Result<Tensor<T>> {
    channel_norm_forward(input, params, mode).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_small_cases() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2d(&x).unwrap().data(), &[4.0]);
        let c = Tensor::full(vec![2, 3, 4, 6], 2.5f32);
        let y = maxpool2d(&c).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn maxpool_rejects_odd_extent() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 3, 4]);
        assert!(matches!(maxpool2d(&x), Err(Error::Config(_))));
    }

    #[test]
    fn leaky_relu_branches() {
        let x = Tensor::new(vec![3], vec![0.0f32, 2.0, -3.0]).unwrap();
        let y = leaky_relu(&x, 0.1);
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], 2.0);
        assert!((y.data()[2] + 0.3).abs() < 1e-7);
    }

    #[test]
    fn logistic_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(0.2f64) - 0.549_833_997_312_478).abs() < 1e-6);
        for x in [-30.0f64, -3.3, -0.01, 0.7, 12.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
        }
        assert!(sigmoid(-80.0f32) > 0.0);
    }

    #[test]
    fn channel_norm_identity_on_standardized_input() {
        // each channel of this batch is already zero-mean, unit-variance
        let x = Tensor::new(vec![2, 2, 1, 2], vec![1.0f64, -1.0, 2.0, 0.0, -1.0, 1.0, -2.0, 0.0]).unwrap();
        let mut xs = x;
        // rescale channel 1 to unit variance: values 2,0,-2,0 have var 2
        for i in [2, 3, 6, 7] {
            xs.data_mut()[i] /= 2f64.sqrt();
        }
        let params = NormParams {
            scale: Tensor::full(vec![2], 1.0),
            shift: Tensor::zeros(vec![2]),
        };
        let mut stats = RunningStats::new(2);
        let y = channel_norm(&xs, &params, NormMode::Train { stats: &mut stats, momentum: 0.1 }).unwrap();
        assert!(y.max_abs_diff(&xs) < 1e-5);
    }

    #[test]
    fn channel_norm_constant_input_gives_shift() {
        let x = Tensor::full(vec![1, 2, 3, 3], 4.0f32);
        let params = NormParams {
            scale: Tensor::full(vec![2], 1.7),
            shift: Tensor::new(vec![2], vec![0.25, -0.5]).unwrap(),
        };
        let mut stats = RunningStats::new(2);
        let y = channel_norm(&x, &params, NormMode::Train { stats: &mut stats, momentum: 0.1 }).unwrap();
        for (i, &v) in y.data().iter().enumerate() {
            let expect = if i < 9 { 0.25 } else { -0.5 };
            assert!((v - expect).abs() < 1e-6);
        }
        assert!(stats.var.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn channel_norm_infer_uses_running_stats() {
        let x = Tensor::full(vec![1, 1, 2, 2], 3.0f64);
        let params = NormParams {
            scale: Tensor::full(vec![1], 2.0),
            shift: Tensor::full(vec![1], 1.0),
        };
        let stats = RunningStats {
            mean: Tensor::full(vec![1], 1.0),
            var: Tensor::full(vec![1], 4.0),
        };
        let y = channel_norm(&x, &params, NormMode::Infer(&stats)).unwrap();
        let expect = 2.0 * (3.0 - 1.0) / (4.0 + NORM_EPSILON).sqrt() + 1.0;
        assert!(y.data().iter().all(|&v| (v - expect).abs() < 1e-12));
    }
}
