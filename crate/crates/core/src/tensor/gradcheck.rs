//! Central finite-difference check of analytic gradients, in 64-bit.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct FdConfig {
    pub epsilon: f64,
    /// Coordinates checked per tensor; larger tensors are subsampled.
    pub max_coords_per_tensor: usize,
    pub seed: u64,
    /// Denominator floor of the relative error, so near-zero gradients are
    /// compared in absolute terms. Roundoff in a central difference at
    /// ε = 1e-4 is around 1e-11 for O(1) objectives.
    pub abs_floor: f64,
    /// A coordinate whose difference quotients at ε and ε/2 disagree by more
    /// than this (relative) straddles a kink (ReLU or max switch) and is
    /// skipped rather than scored.
    pub kink_tolerance: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_coords_per_tensor: 24,
            seed: 0,
            abs_floor: 1e-4,
            kink_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    /// `(tensor index, flat offset)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

impl FdReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

/// Compares `analytic[i]` with central differences coordinate-wise. The
/// quotients at ε and ε/2 are combined by Richardson extrapolation,
/// `(4·D(ε/2) − D(ε)) / 3`, which cancels the O(ε²) truncation term.
pub fn finite_diff_check<F>(mut f: F, params: &[Tensor<f64>], analytic: &[Tensor<f64>], cfg: &FdConfig) -> Result<FdReport>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::shape("finite_diff_check", "tensor list", params.len(), analytic.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = FdReport::default();
    let eps = cfg.epsilon;

    for (ti, (p, a)) in params.iter().zip(analytic).enumerate() {
        if p.shape() != a.shape() {
            return Err(Error::shape("finite_diff_check", format!("tensor {ti}"), p.len(), a.len()));
        }
        let coords: Vec<usize> = if p.len() <= cfg.max_coords_per_tensor {
            (0..p.len()).collect()
        } else {
            let mut c = sample(&mut rng, p.len(), cfg.max_coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let base = p.data()[i];
            let mut eval = |delta: f64, work: &mut Vec<Tensor<f64>>| -> Result<f64> {
                work[ti].data_mut()[i] = base + delta;
                let v = f(work);
                work[ti].data_mut()[i] = base;
                v
            };
            let numeric = (eval(eps, &mut work)? - eval(-eps, &mut work)?) / (2.0 * eps);
            let numeric_half = (eval(eps / 2.0, &mut work)? - eval(-eps / 2.0, &mut work)?) / eps;
            if !numeric.is_finite() {
                return Err(Error::Numeric(format!("non-finite difference quotient at tensor {ti} offset {i}")));
            }
            if (numeric - numeric_half).abs() > cfg.kink_tolerance * numeric.abs().max(1.0) {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (4.0 * numeric_half - numeric) / 3.0;
            let analytic_v = a.data()[i];
            let denom = analytic_v.abs().max(numeric.abs()).max(cfg.abs_floor);
            let err = (analytic_v - numeric).abs() / denom;
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((ti, i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let coef = Tensor::from_fn(vec![7], |i| i as f64 * 0.5 - 1.2);
        let theta = vec![Tensor::from_fn(vec![7], |i| (i as f64).sin())];
        let f = |p: &[Tensor<f64>]| Ok(p[0].data().iter().zip(coef.data()).map(|(a, b)| a * b).sum::<f64>());
        let report = finite_diff_check(f, &theta, std::slice::from_ref(&coef), &FdConfig::default()).unwrap();
        assert_eq!(report.checked, 7);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let theta = vec![Tensor::from_fn(vec![3], |i| i as f64 + 0.5)];
        let f = |p: &[Tensor<f64>]| Ok(p[0].data().iter().map(|x| x * x).sum::<f64>());
        let wrong = vec![theta[0].scale(4.0)]; // true gradient is 2θ
        let report = finite_diff_check(f, &theta, &wrong, &FdConfig::default()).unwrap();
        assert!(report.max_rel_error > 0.1);
        assert!(!report.passes(1e-5));
    }

    #[test]
    fn kinks_are_skipped_not_scored() {
        // |x| evaluated exactly at its kink
        let theta = vec![Tensor::scalar(0.0f64)];
        let f = |p: &[Tensor<f64>]| Ok(p[0].data()[0].abs() + 0.3 * p[0].data()[0]);
        let grad = vec![Tensor::scalar(1.3)];
        let report = finite_diff_check(f, &theta, &grad, &FdConfig::default()).unwrap();
        // symmetric differences see slope 0.3 at both scales: not a detectable kink
        assert_eq!(report.checked, 1);
        let theta = vec![Tensor::scalar(0.6e-4f64)];
        let report = finite_diff_check(f, &theta, &grad, &FdConfig::default()).unwrap();
        assert_eq!(report.skipped_kinks, 1);
    }
}
