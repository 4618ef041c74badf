use serde::{Deserialize, Serialize};

use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        // zero learning rate is allowed so a run can be frozen for diagnostics
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the velocity:
///
/// ```text
/// v ← momentum·v + grad + weight_decay·θ
/// θ ← θ − lr·v
/// ```
#[derive(Clone, Debug)]
pub struct Sgd<T = f32> {
    config: SgdConfig,
    velocity: Vec<Tensor<T>>,
}

impl<T: Element> Sgd<T> {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("sgd_step", "parameter list", params.len(), grads.len()));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        }
        let lr = T::from_f64(self.config.learning_rate);
        let mom = T::from_f64(self.config.momentum);
        let wd = T::from_f64(self.config.weight_decay);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::shape(
                    "sgd_step",
                    "parameter",
                    super::fmt_shape(p.shape()),
                    super::fmt_shape(g.shape()),
                ));
            }
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = mom * *vv + gv + wd * *pv;
                *pv = *pv - lr * *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, momentum: f64, wd: f64) -> SgdConfig {
        SgdConfig {
            learning_rate: lr,
            momentum,
            weight_decay: wd,
            batch_size: 1,
        }
    }

    #[test]
    fn zero_gradient_no_decay_leaves_params() {
        let mut p = vec![Tensor::from_fn(vec![4], |i| i as f64)];
        let before = p.clone();
        let mut sgd = Sgd::new(cfg(0.1, 0.9, 0.0)).unwrap();
        sgd.step(&mut p, &[Tensor::zeros(vec![4])]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn vanilla_step() {
        let mut p = vec![Tensor::new(vec![2], vec![1.0f64, -2.0]).unwrap()];
        let g = Tensor::new(vec![2], vec![0.5, 0.25]).unwrap();
        let mut sgd = Sgd::new(cfg(0.1, 0.0, 0.0)).unwrap();
        sgd.step(&mut p, &[g]).unwrap();
        assert_eq!(p[0].data(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
    }

    #[test]
    fn momentum_two_steps_on_constant_gradient() {
        // v1 = g, v2 = 0.9 g + g = 1.9 g → total displacement lr·g·2.9
        let (lr, g) = (0.01, 3.0);
        let mut p = vec![Tensor::scalar(0.0f64)];
        let mut sgd = Sgd::new(cfg(lr, 0.9, 0.0)).unwrap();
        for _ in 0..2 {
            sgd.step(&mut p, &[Tensor::scalar(g)]).unwrap();
        }
        assert!((p[0].data()[0] + lr * g * 2.9).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Sgd::<f32>::new(cfg(0.1, 1.0, 0.0)).is_err());
        assert!(Sgd::<f32>::new(cfg(-1.0, 0.5, 0.0)).is_err());
    }
}
