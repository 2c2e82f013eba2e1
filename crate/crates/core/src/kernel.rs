//! Covariance functions and kernel-matrix assembly.
//!
//! Hyperparameters are exposed in natural-log space so that gradient-based
//! tuning keeps them positive without constraints.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Inputs;
use crate::error::{Error, Result};

/// A positive-definite covariance function with log-parameterized
/// hyperparameters.
pub trait Kernel: Clone + std::fmt::Debug {
    /// Covariance between two points of equal dimension. Inputs are assumed
    /// finite; use [`eval_kernel`] for checked evaluation.
    fn eval(&self, a: &[f64], b: &[f64]) -> f64;

    /// Hyperparameters in natural-log space.
    fn log_params(&self) -> Vec<f64>;

    fn with_log_params(&self, log_params: &[f64]) -> Result<Self>;

    /// `dK/d(log θ_j)` for every hyperparameter, in the order of
    /// [`Kernel::log_params`].
    fn log_param_gradients(&self, inputs: &Inputs) -> Vec<DMatrix<f64>>;
}

/// Squared-exponential (RBF) kernel `s² exp(-|a-b|² / (2 l²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub length_scale: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, length_scale: f64) -> Result<Self> {
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return Err(Error::InvalidInput(format!(
                "signal variance must be positive and finite, got {signal_variance}"
            )));
        }
        if !(length_scale.is_finite() && length_scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "length scale must be positive and finite, got {length_scale}"
            )));
        }
        Ok(KernelParams {
            signal_variance,
            length_scale,
        })
    }

    /// Data-driven default: signal variance = var(y), length scale = median
    /// pairwise distance. Degenerate values fall back to 1.
    pub fn heuristic(inputs: &Inputs, y: &[f64]) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut dists = Vec::with_capacity(inputs.len() * inputs.len().saturating_sub(1) / 2);
        for i in 0..inputs.len() {
            for j in i + 1..inputs.len() {
                dists.push(sq_dist(inputs.row(i), inputs.row(j)).sqrt());
            }
        }
        let median = crate::stats::median(&mut dists).unwrap_or(1.0);
        let pick = |v: f64| if v.is_finite() && v > 0.0 { v } else { 1.0 };
        KernelParams {
            signal_variance: pick(var),
            length_scale: pick(median),
        }
    }

    fn exp_factor(&self, sq: f64) -> f64 {
        (-sq / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

impl Kernel for KernelParams {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_variance * self.exp_factor(sq_dist(a, b))
    }

    fn log_params(&self) -> Vec<f64> {
        vec![self.signal_variance.ln(), self.length_scale.ln()]
    }

    fn with_log_params(&self, log_params: &[f64]) -> Result<Self> {
        match log_params {
            [s, l] => KernelParams::new(s.exp(), l.exp()),
            _ => Err(Error::DimensionMismatch(format!(
                "RBF kernel has 2 hyperparameters, got {}",
                log_params.len()
            ))),
        }
    }

    fn log_param_gradients(&self, inputs: &Inputs) -> Vec<DMatrix<f64>> {
        let n = inputs.len();
        let mut d_signal = DMatrix::zeros(n, n);
        let mut d_length = DMatrix::zeros(n, n);
        let l2 = self.length_scale * self.length_scale;
        for i in 0..n {
            d_signal[(i, i)] = self.signal_variance;
            for j in 0..i {
                let sq = sq_dist(inputs.row(i), inputs.row(j));
                let k = self.signal_variance * self.exp_factor(sq);
                // d/d(log l) exp(-r²/(2l²)) = (r²/l²) exp(...)
                let dl = k * sq / l2;
                d_signal[(i, j)] = k;
                d_signal[(j, i)] = k;
                d_length[(i, j)] = dl;
                d_length[(j, i)] = dl;
            }
        }
        vec![d_signal, d_length]
    }
}

/// Checked kernel evaluation.
pub fn eval_kernel<K: Kernel>(kernel: &K, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "points of dimension {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite input coordinate".into()));
    }
    Ok(kernel.eval(a, b))
}

/// Assembles the prior covariance matrix `K_ij = k(x_i, x_j)`.
///
/// Only the lower triangle is evaluated and mirrored, so the result is
/// exactly symmetric.
pub fn build_kernel_matrix<K: Kernel>(kernel: &K, inputs: &Inputs) -> Result<DMatrix<f64>> {
    let n = inputs.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !inputs.is_finite() {
        return Err(Error::InvalidInput("non-finite input coordinate".into()));
    }
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let xi = inputs.row(i);
        k[(i, i)] = kernel.eval(xi, xi);
        for j in 0..i {
            let v = kernel.eval(xi, inputs.row(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Gradients of the kernel matrix with respect to the log-hyperparameters.
pub fn kernel_grad_theta<K: Kernel>(kernel: &K, inputs: &Inputs) -> Result<Vec<DMatrix<f64>>> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !inputs.is_finite() {
        return Err(Error::InvalidInput("non-finite input coordinate".into()));
    }
    Ok(kernel.log_param_gradients(inputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn rbf(s: f64, l: f64) -> KernelParams {
        KernelParams::new(s, l).unwrap()
    }

    #[test]
    fn eval_closed_forms() {
        assert_eq!(eval_kernel(&rbf(1.0, 1.0), &[0.3], &[0.3]).unwrap(), 1.0);
        assert_eq!(eval_kernel(&rbf(4.0, 1.0), &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 4.0);
        let v = eval_kernel(&rbf(1.0, 1.0), &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn eval_rejects_non_finite() {
        assert!(matches!(
            eval_kernel(&rbf(1.0, 1.0), &[f64::NAN], &[0.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(KernelParams::new(0.0, 1.0).is_err());
        assert!(KernelParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn matrix_examples() {
        let one = Inputs::new(vec![0.5], 1).unwrap();
        assert_eq!(build_kernel_matrix(&rbf(1.0, 1.0), &one).unwrap()[(0, 0)], 1.0);

        let dup = Inputs::new(vec![0.5, 0.5], 1).unwrap();
        let k = build_kernel_matrix(&rbf(1.0, 1.0), &dup).unwrap();
        assert!(k.iter().all(|&v| v == 1.0));

        let pair = Inputs::new(vec![0.0, 2f64.sqrt()], 1).unwrap();
        let k = build_kernel_matrix(&rbf(1.0, 1.0), &pair).unwrap();
        let e = (-1.0f64).exp();
        assert!((k[(0, 1)] - e).abs() < 1e-15 && (k[(1, 0)] - e).abs() < 1e-15);
        assert_eq!(k[(0, 0)], 1.0);

        let empty = Inputs::new(vec![], 1).unwrap();
        assert!(matches!(
            build_kernel_matrix(&rbf(1.0, 1.0), &empty),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn signal_gradient_is_kernel_and_length_gradient_vanishes_on_diagonal() {
        let mut rng = SeededRng::new(3);
        let inputs = Inputs::new((0..10).map(|_| rng.uniform()).collect(), 2).unwrap();
        let kern = rbf(1.7, 0.4);
        let grads = kernel_grad_theta(&kern, &inputs).unwrap();
        let k = build_kernel_matrix(&kern, &inputs).unwrap();
        assert_eq!(grads[0], k);
        for i in 0..inputs.len() {
            assert_eq!(grads[1][(i, i)], 0.0);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(0);
        let inputs = Inputs::new((0..12).map(|_| rng.uniform() * 2.0).collect(), 2).unwrap();
        let kern = rbf(1.3, 0.7);
        let grads = kernel_grad_theta(&kern, &inputs).unwrap();
        let h = 1e-5;
        for (j, g) in grads.iter().enumerate() {
            let mut plus = kern.log_params();
            let mut minus = kern.log_params();
            plus[j] += h;
            minus[j] -= h;
            let kp = build_kernel_matrix(&kern.with_log_params(&plus).unwrap(), &inputs).unwrap();
            let km = build_kernel_matrix(&kern.with_log_params(&minus).unwrap(), &inputs).unwrap();
            let fd = (kp - km) / (2.0 * h);
            for (a, b) in g.iter().zip(fd.iter()) {
                let scale = a.abs().max(1e-3);
                assert!((a - b).abs() / scale < 1e-6, "analytic {a} vs fd {b}");
            }
            assert_eq!(g, &g.transpose());
        }
    }

    #[test]
    fn heuristic_center() {
        let inputs = Inputs::new(vec![0.0, 1.0, 3.0], 1).unwrap();
        let p = KernelParams::heuristic(&inputs, &[1.0, -1.0, 0.0]);
        assert!((p.signal_variance - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.length_scale, 2.0);
    }
}
