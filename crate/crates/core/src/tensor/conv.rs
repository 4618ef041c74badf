//! 2D and 3D convolution as lowered matrix products.
//!
//! The input patch matrix has one row per `(in_channel, dt, dy, dx)` kernel
//! tap in that order and one column per output position, so every output
//! element is `bias + Σ_taps w · v` with the tap sum order fixed by the
//! kernel layout. Batch samples are processed in index order.
//!
//! Activations are not part of the convolution; compose with
//! [`leaky_relu`](super::ops::leaky_relu) or [`logistic`](super::ops::logistic).

use serde::{Deserialize, Serialize};

use super::{fmt_shape, Element, Tensor};
use crate::error::{Error, Result};

/// Geometry of one convolution layer. Axis order is `[time, height, width]`;
/// a 2D convolution is a 3D one with unit temporal kernel, stride and no
/// temporal padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

/// Weight `[out, in, (kt,) kh, kw]` and bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

const AXES: [&str; 3] = ["time", "height", "width"];

impl ConvSpec {
    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: [1, kernel, kernel],
            stride: [1, stride, stride],
            padding: [0, padding, padding],
        }
    }

    pub fn conv3d(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn is_2d(&self) -> bool {
        self.kernel[0] == 1 && self.stride[0] == 1 && self.padding[0] == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("convolution channel counts must be positive".into()));
        }
        for axis in 0..3 {
            if self.kernel[axis] == 0 || self.stride[axis] == 0 {
                return Err(Error::Config(format!(
                    "convolution kernel and stride must be positive on the {} axis",
                    AXES[axis]
                )));
            }
        }
        Ok(())
    }

    /// Taps per output channel, `in · kt · kh · kw`.
    pub fn taps(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    pub fn parameter_count(&self) -> usize {
        self.out_channels * self.taps() + self.out_channels
    }

    pub fn weight_shape(&self, spatial_rank: usize) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        if spatial_rank == 3 {
            s.push(self.kernel[0]);
        }
        s.extend_from_slice(&self.kernel[1..]);
        s
    }

    /// `(in + 2·pad − kernel) / stride + 1` on every axis; must divide evenly.
    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for axis in 0..3 {
            let padded = input[axis] + 2 * self.padding[axis];
            if padded < self.kernel[axis] {
                return Err(Error::shape(
                    "conv",
                    AXES[axis],
                    format!("padded extent ≥ kernel {}", self.kernel[axis]),
                    padded,
                ));
            }
            let span = padded - self.kernel[axis];
            if !span.is_multiple_of(self.stride[axis]) {
                return Err(Error::shape(
                    "conv",
                    AXES[axis],
                    format!("(extent + 2·pad − kernel) divisible by stride {}", self.stride[axis]),
                    span,
                ));
            }
            out[axis] = span / self.stride[axis] + 1;
        }
        Ok(out)
    }
}

/// Batch, channels and `[t, h, w]` of a 4D or 5D activation.
pub(crate) fn volume_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, [usize; 3])> {
    match *shape {
        [n, c, h, w] => Ok((n, c, [1, h, w])),
        [n, c, t, h, w] => Ok((n, c, [t, h, w])),
        _ => Err(Error::shape(op, "rank", "4 or 5", shape.len())),
    }
}

fn check_params<T: Element>(
    op: &'static str,
    input: &Tensor<T>,
    params: &ConvParams<T>,
    spec: &ConvSpec,
) -> Result<(usize, [usize; 3], [usize; 3])> {
    spec.validate()?;
    let rank = input.rank();
    let (n, c, dims) = volume_dims(op, input.shape())?;
    if rank == 4 && !spec.is_2d() {
        return Err(Error::shape(op, "time", "unit temporal kernel for 4D input", spec.kernel[0]));
    }
    if c != spec.in_channels {
        return Err(Error::shape(op, "channel", spec.in_channels, c));
    }
    let wshape = spec.weight_shape(rank - 2);
    if params.weight.shape() != wshape.as_slice() {
        return Err(Error::shape(op, "weight", fmt_shape(&wshape), fmt_shape(params.weight.shape())));
    }
    if params.bias.shape() != [spec.out_channels] {
        return Err(Error::shape(op, "bias", spec.out_channels, fmt_shape(params.bias.shape())));
    }
    let out = spec.output_extents(dims)?;
    Ok((n, dims, out))
}

fn output_shape(rank: usize, n: usize, c: usize, out: [usize; 3]) -> Vec<usize> {
    if rank == 4 {
        vec![n, c, out[1], out[2]]
    } else {
        vec![n, c, out[0], out[1], out[2]]
    }
}

fn is_pointwise(spec: &ConvSpec) -> bool {
    spec.kernel == [1, 1, 1] && spec.stride == [1, 1, 1] && spec.padding == [0, 0, 0]
}

/// Valid output index range `[lo, hi)` along one axis for kernel offset `k`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, pad: usize, k: usize) -> (usize, usize) {
    // need 0 <= o*stride + k - pad < in_len
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col<T: Element>(x: &[T], c: usize, dims: [usize; 3], spec: &ConvSpec, out: [usize; 3], col: &mut [T]) {
    let [kt, kh, kw] = spec.kernel;
    let [st, sh, sw] = spec.stride;
    let [pt, ph, pw] = spec.padding;
    let [ti, hi, wi] = dims;
    let [to, ho, wo] = out;
    let p = to * ho * wo;
    let mut row = 0;
    for ci in 0..c {
        let xc = &x[ci * ti * hi * wi..(ci + 1) * ti * hi * wi];
        for dt in 0..kt {
            let (t_lo, t_hi) = valid_range(to, ti, st, pt, dt);
            for dy in 0..kh {
                let (y_lo, y_hi) = valid_range(ho, hi, sh, ph, dy);
                for dx in 0..kw {
                    let (x_lo, x_hi) = valid_range(wo, wi, sw, pw, dx);
                    let dst = &mut col[row * p..(row + 1) * p];
                    dst.fill(T::zero());
                    for ot in t_lo..t_hi {
                        let it = ot * st + dt - pt;
                        for oy in y_lo..y_hi {
                            let iy = oy * sh + dy - ph;
                            let src = &xc[(it * hi + iy) * wi..(it * hi + iy + 1) * wi];
                            let d = &mut dst[(ot * ho + oy) * wo..(ot * ho + oy + 1) * wo];
                            if sw == 1 {
                                let start = x_lo + dx - pw;
                                d[x_lo..x_hi].copy_from_slice(&src[start..start + (x_hi - x_lo)]);
                            } else {
                                for ox in x_lo..x_hi {
                                    d[ox] = src[ox * sw + dx - pw];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im_add<T: Element>(col: &[T], c: usize, dims: [usize; 3], spec: &ConvSpec, out: [usize; 3], gx: &mut [T]) {
    let [kt, kh, kw] = spec.kernel;
    let [st, sh, sw] = spec.stride;
    let [pt, ph, pw] = spec.padding;
    let [ti, hi, wi] = dims;
    let [to, ho, wo] = out;
    let p = to * ho * wo;
    let mut row = 0;
    for ci in 0..c {
        let gc = &mut gx[ci * ti * hi * wi..(ci + 1) * ti * hi * wi];
        for dt in 0..kt {
            let (t_lo, t_hi) = valid_range(to, ti, st, pt, dt);
            for dy in 0..kh {
                let (y_lo, y_hi) = valid_range(ho, hi, sh, ph, dy);
                for dx in 0..kw {
                    let (x_lo, x_hi) = valid_range(wo, wi, sw, pw, dx);
                    let srow = &col[row * p..(row + 1) * p];
                    for ot in t_lo..t_hi {
                        let it = ot * st + dt - pt;
                        for oy in y_lo..y_hi {
                            let iy = oy * sh + dy - ph;
                            let d = &mut gc[(it * hi + iy) * wi..(it * hi + iy + 1) * wi];
                            let s = &srow[(ot * ho + oy) * wo..(ot * ho + oy + 1) * wo];
                            for ox in x_lo..x_hi {
                                let ix = ox * sw + dx - pw;
                                d[ix] = d[ix] + s[ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn conv_forward<T: Element>(op: &'static str, input: &Tensor<T>, params: &ConvParams<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let (n, dims, out) = check_params(op, input, params, spec)?;
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let k = spec.taps();
    let p: usize = out.iter().product();
    let in_len = cin * dims.iter().product::<usize>();
    let pointwise = is_pointwise(spec);
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    let mut y = vec![T::zero(); n * cout * p];
    let w = params.weight.data();
    let b = params.bias.data();
    for s in 0..n {
        let x = &input.data()[s * in_len..(s + 1) * in_len];
        let ys = &mut y[s * cout * p..(s + 1) * cout * p];
        for (co, chunk) in ys.chunks_mut(p).enumerate() {
            chunk.fill(b[co]);
        }
        let src: &[T] = if pointwise {
            x
        } else {
            im2col(x, cin, dims, spec, out, &mut col);
            &col
        };
        unsafe {
            T::gemm(
                cout, k, p, T::one(),
                w.as_ptr(), k as isize, 1,
                src.as_ptr(), p as isize, 1,
                T::one(),
                ys.as_mut_ptr(), p as isize, 1,
            );
        }
    }
    Tensor::new(output_shape(input.rank(), n, cout, out), y)
}

/// Gradients of a convolution with respect to its input, weight and bias.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv_backward<T: Element>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, dims, out) = check_params("conv_backward", input, params, spec)?;
    let expected = output_shape(input.rank(), n, spec.out_channels, out);
    if grad_out.shape() != expected.as_slice() {
        return Err(Error::shape(
            "conv_backward",
            "output gradient",
            fmt_shape(&expected),
            fmt_shape(grad_out.shape()),
        ));
    }
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let k = spec.taps();
    let p: usize = out.iter().product();
    let in_len = cin * dims.iter().product::<usize>();
    let pointwise = is_pointwise(spec);
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    let mut gcol = vec![T::zero(); k * p];
    let mut gx = vec![T::zero(); input.len()];
    let mut gw = vec![T::zero(); cout * k];
    let mut gb = vec![T::zero(); cout];
    let w = params.weight.data();
    for s in 0..n {
        let x = &input.data()[s * in_len..(s + 1) * in_len];
        let go = &grad_out.data()[s * cout * p..(s + 1) * cout * p];
        for (co, chunk) in go.chunks(p).enumerate() {
            gb[co] = gb[co] + chunk.iter().copied().sum::<T>();
        }
        let src: &[T] = if pointwise {
            x
        } else {
            im2col(x, cin, dims, spec, out, &mut col);
            &col
        };
        unsafe {
            // gW[co, k] += Σ_p gout[co, p] · col[k, p]
            T::gemm(
                cout, p, k, T::one(),
                go.as_ptr(), p as isize, 1,
                src.as_ptr(), 1, p as isize,
                T::one(),
                gw.as_mut_ptr(), k as isize, 1,
            );
        }
        let gxs = &mut gx[s * in_len..(s + 1) * in_len];
        if pointwise {
            unsafe {
                T::gemm(
                    k, cout, p, T::one(),
                    w.as_ptr(), 1, k as isize,
                    go.as_ptr(), p as isize, 1,
                    T::zero(),
                    gxs.as_mut_ptr(), p as isize, 1,
                );
            }
        } else {
            unsafe {
                // gcol[k, p] = Σ_co W[co, k] · gout[co, p]
                T::gemm(
                    k, cout, p, T::one(),
                    w.as_ptr(), 1, k as isize,
                    go.as_ptr(), p as isize, 1,
                    T::zero(),
                    gcol.as_mut_ptr(), p as isize, 1,
                );
            }
            col2im_add(&gcol, cin, dims, spec, out, gxs);
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weight: Tensor::new(params.weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![cout], gb)?,
    })
}

/// 3D convolution of `[N, C, T, H, W]` activations, no activation applied.
pub fn conv3d_forward<T: Element>(input: &Tensor<T>, params: &ConvParams<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    if input.rank() != 5 {
        return Err(Error::shape("conv3d", "rank", 5, input.rank()));
    }
    conv_forward("conv3d", input, params, spec)
}

/// 2D convolution of `[N, C, H, W]` activations, no activation applied.
pub fn conv2d_forward<T: Element>(input: &Tensor<T>, params: &ConvParams<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    if input.rank() != 4 {
        return Err(Error::shape("conv2d", "rank", 4, input.rank()));
    }
    conv_forward("conv2d", input, params, spec)
}
