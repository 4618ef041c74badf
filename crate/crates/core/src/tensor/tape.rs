//! Reverse-mode differentiation over a linear record of executed ops.

use super::conv::{conv_backward, ConvParams, ConvSpec};
use super::ops::{
    channel_norm_backward, channel_norm_forward, leaky_relu, leaky_relu_backward, logistic, logistic_backward,
    maxpool2d_backward, maxpool2d_with_argmax, NormCache, NormMode, NormParams,
};
use super::{fmt_shape, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Input,
    Param,
    Conv { input: Var, weight: Var, bias: Var, spec: ConvSpec },
    MaxPool { input: Var, argmax: Vec<u32> },
    LeakyRelu { input: Var, slope: f64 },
    Logistic { input: Var },
    Norm { input: Var, scale: Var, shift: Var, cache: NormCache<T> },
    Reshape { input: Var },
    SwapAxes12 { input: Var },
    SelectTime { input: Var, index: usize },
    Sum { input: Var },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Tape of executed operations. Every op appends one node; `backward`
/// walks the nodes in exact reverse order.
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<usize>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of `var`. Parameters and inputs that received no signal get
    /// an all-zero tensor.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }

    /// Node indices in the order backward processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Input, value)
    }

    /// A leaf that always receives a gradient in `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Param, value)
    }

    pub fn conv(&mut self, input: Var, weight: Var, bias: Var, spec: &ConvSpec) -> Result<Var> {
        let params = ConvParams {
            weight: self.value(weight).clone(),
            bias: self.value(bias).clone(),
        };
        let x = self.value(input);
        let y = match x.rank() {
            4 => super::conv::conv2d_forward(x, &params, spec)?,
            _ => super::conv::conv3d_forward(x, &params, spec)?,
        };
        Ok(self.push(Op::Conv { input, weight, bias, spec: *spec }, y))
    }

    pub fn max_pool2d(&mut self, input: Var) -> Result<Var> {
        let (y, argmax) = maxpool2d_with_argmax(self.value(input))?;
        Ok(self.push(Op::MaxPool { input, argmax }, y))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let y = leaky_relu(self.value(input), slope);
        self.push(Op::LeakyRelu { input, slope }, y)
    }

    pub fn logistic(&mut self, input: Var) -> Var {
        let y = logistic(self.value(input));
        self.push(Op::Logistic { input }, y)
    }

    pub fn channel_norm(&mut self, input: Var, scale: Var, shift: Var, mode: NormMode<'_, T>) -> Result<Var> {
        let params = NormParams {
            scale: self.value(scale).clone(),
            shift: self.value(shift).clone(),
        };
        let (y, cache) = channel_norm_forward(self.value(input), &params, mode)?;
        Ok(self.push(Op::Norm { input, scale, shift, cache }, y))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(input).clone().reshape(shape.to_vec())?;
        Ok(self.push(Op::Reshape { input }, y))
    }

    /// `[A, B, C, rest...] → [A, C, B, rest...]`.
    pub fn swap_axes_1_2(&mut self, input: Var) -> Result<Var> {
        let y = swap12(self.value(input))?;
        Ok(self.push(Op::SwapAxes12 { input }, y))
    }

    /// `[N, C, T, H, W] → [N, C, H, W]` at temporal index `index`.
    pub fn select_time(&mut self, input: Var, index: usize) -> Result<Var> {
        let x = self.value(input);
        let [n, c, t, h, w] = match *x.shape() {
            [n, c, t, h, w] => [n, c, t, h, w],
            _ => return Err(Error::shape("select_time", "rank", 5, x.rank())),
        };
        if index >= t {
            return Err(Error::shape("select_time", "time", format!("index < {t}"), index));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * c * plane);
        for nc in 0..n * c {
            let start = (nc * t + index) * plane;
            data.extend_from_slice(&x.data()[start..start + plane]);
        }
        let y = Tensor::new(vec![n, c, h, w], data)?;
        Ok(self.push(Op::SelectTime { input, index }, y))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let y = Tensor::scalar(self.value(input).sum());
        self.push(Op::Sum { input }, y)
    }

    /// Propagates `seed` (the gradient of the final objective with respect
    /// to `output`) back through every recorded op.
    pub fn backward(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(
                "backward",
                "seed",
                fmt_shape(self.value(output).shape()),
                fmt_shape(seed.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        let mut visited = Vec::with_capacity(output.0 + 1);

        for idx in (0..=output.0).rev() {
            visited.push(idx);
            let node = &self.nodes[idx];
            let Some(g) = grads[idx].take() else {
                if matches!(node.op, Op::Param | Op::Input) {
                    grads[idx] = Some(Tensor::zeros(node.value.shape().to_vec()));
                }
                continue;
            };
            match &node.op {
                Op::Input | Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::Conv { input, weight, bias, spec } => {
                    let params = ConvParams {
                        weight: self.value(*weight).clone(),
                        bias: self.value(*bias).clone(),
                    };
                    let cg = conv_backward(self.value(*input), &params, spec, &g)?;
                    accumulate(&mut grads, *input, cg.input)?;
                    accumulate(&mut grads, *weight, cg.weight)?;
                    accumulate(&mut grads, *bias, cg.bias)?;
                }
                Op::MaxPool { input, argmax } => {
                    let gx = maxpool2d_backward(self.value(*input).shape(), argmax, &g);
                    accumulate(&mut grads, *input, gx)?;
                }
                Op::LeakyRelu { input, slope } => {
                    let gx = leaky_relu_backward(self.value(*input), *slope, &g);
                    accumulate(&mut grads, *input, gx)?;
                }
                Op::Logistic { input } => {
                    let gx = logistic_backward(&node.value, &g);
                    accumulate(&mut grads, *input, gx)?;
                }
                Op::Norm { input, scale, shift, cache } => {
                    let params = NormParams {
                        scale: self.value(*scale).clone(),
                        shift: self.value(*shift).clone(),
                    };
                    let (gx, gs, gb) = channel_norm_backward(self.value(*input).shape(), &params, cache, &g);
                    accumulate(&mut grads, *input, gx)?;
                    accumulate(&mut grads, *scale, gs)?;
                    accumulate(&mut grads, *shift, gb)?;
                }
                Op::Reshape { input } => {
                    let gx = g.reshape(self.value(*input).shape().to_vec())?;
                    accumulate(&mut grads, *input, gx)?;
                }
                Op::SwapAxes12 { input } => {
                    accumulate(&mut grads, *input, swap12(&g)?)?;
                }
                Op::SelectTime { input, index } => {
                    let shape = self.value(*input).shape();
                    let (t, plane) = (shape[2], shape[3] * shape[4]);
                    let mut gx = Tensor::zeros(shape.to_vec());
                    for (nc, chunk) in g.data().chunks(plane).enumerate() {
                        let start = (nc * t + index) * plane;
                        gx.data_mut()[start..start + plane].copy_from_slice(chunk);
                    }
                    accumulate(&mut grads, *input, gx)?;
                }
                Op::Sum { input } => {
                    let v = g.data()[0];
                    let gx = Tensor::full(self.value(*input).shape().to_vec(), v);
                    accumulate(&mut grads, *input, gx)?;
                }
            }
        }
        Ok(Gradients { grads, visited })
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn swap12<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() < 3 {
        return Err(Error::shape("swap_axes", "rank", "≥ 3", s.len()));
    }
    let (a, b, c) = (s[0], s[1], s[2]);
    let inner: usize = s[3..].iter().product();
    let mut out = Vec::with_capacity(x.len());
    for ia in 0..a {
        for ic in 0..c {
            for ib in 0..b {
                let start = ((ia * b + ib) * c + ic) * inner;
                out.extend_from_slice(&x.data()[start..start + inner]);
            }
        }
    }
    let mut shape = s.to_vec();
    shape.swap(1, 2);
    Tensor::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_visits_in_reverse_and_zero_fills_params() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(vec![1, 1, 2, 2], |i| i as f64 - 1.5));
        let unused = g.param(Tensor::full(vec![3], 1.0));
        let y = g.leaky_relu(x, 0.1);
        let s = g.sum(y);
        let grads = g.backward(s, Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.visit_order(), &[3, 2, 1, 0]);
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0; 3]);
        assert_eq!(grads.get(x).unwrap().data(), &[0.1, 0.1, 1.0, 1.0]);
    }

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(vec![1, 2, 4, 4], |i| (i as f64 * 0.37).sin()));
        let spec = ConvSpec::conv2d(2, 3, 3, 1, 1);
        let w = g.param(Tensor::from_fn(spec.weight_shape(2), |i| (i as f64).cos()));
        let b = g.param(Tensor::full(vec![3], 0.2));
        let y = g.conv(x, w, b, &spec).unwrap();
        let z = g.logistic(y);
        let s = g.sum(z);
        let grads = g.backward(s, Tensor::scalar(0.0)).unwrap();
        for v in [x, w, b] {
            assert!(grads.get(v).unwrap().data().iter().all(|&e| e == 0.0));
        }
    }

    #[test]
    fn swap_axes_is_an_involution() {
        let x = Tensor::<f32>::from_fn(vec![2, 3, 4, 5], |i| i as f32);
        let y = swap12(&x).unwrap();
        assert_eq!(y.shape(), &[2, 4, 3, 5]);
        assert_eq!(y.get(&[1, 2, 0, 3]), x.get(&[1, 0, 2, 3]));
        assert_eq!(swap12(&y).unwrap(), x);
    }
}
