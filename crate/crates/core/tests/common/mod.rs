//! Instance generators and independent oracles shared by the integration
//! tests. Oracles here use nalgebra's own decompositions rather than the
//! crate's factorization path.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use noisy_gpr::data::Inputs;
use noisy_gpr::kernel::{build_kernel_matrix, Kernel, KernelParams};
use noisy_gpr::rng::SeededRng;
use noisy_gpr::{Error, NoiseVector, Result};

/// Kernel whose matrix is `diag(k)` when the inputs are the indices
/// `0, 1, …, N-1`: `k(a, b) = k[a]` if `a == b`, else 0.
#[derive(Debug, Clone)]
pub struct DiagKernel(pub Vec<f64>);

impl Kernel for DiagKernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        if a[0] == b[0] {
            self.0[a[0] as usize]
        } else {
            0.0
        }
    }

    fn log_params(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.ln()).collect()
    }

    fn with_log_params(&self, log_params: &[f64]) -> Result<Self> {
        if log_params.len() != self.0.len() {
            return Err(Error::DimensionMismatch("diag kernel".into()));
        }
        Ok(DiagKernel(log_params.iter().map(|v| v.exp()).collect()))
    }

    fn log_param_gradients(&self, inputs: &Inputs) -> Vec<DMatrix<f64>> {
        let n = inputs.len();
        (0..self.0.len())
            .map(|j| {
                let mut m = DMatrix::zeros(n, n);
                for i in 0..n {
                    if inputs.row(i)[0] as usize == j {
                        m[(i, i)] = self.0[j];
                    }
                }
                m
            })
            .collect()
    }
}

pub fn index_inputs(n: usize) -> Inputs {
    Inputs::new((0..n).map(|i| i as f64).collect(), 1).unwrap()
}

/// Random RBF regression instance.
pub struct Instance {
    pub kernel: KernelParams,
    pub inputs: Inputs,
    pub y: DVector<f64>,
    pub sigma: NoiseVector,
}

/// `N` points uniform in `[0, 1]^dim`, length scale in `[0.15, 0.6]`,
/// signal variance in `[0.5, 2]`, labels from a smooth function plus
/// heavy-tailed noise, σ uniform in `[0.01, 0.5]`.
pub fn rbf_instance(seed: u64, n: usize, dim: usize) -> Instance {
    let mut rng = SeededRng::new(seed);
    let kernel = KernelParams::new(rng.uniform_in(0.5, 2.0), rng.uniform_in(0.15, 0.6)).unwrap();
    let x: Vec<f64> = (0..n * dim).map(|_| rng.uniform()).collect();
    let inputs = Inputs::new(x, dim).unwrap();
    let mut y: Vec<f64> = (0..n)
        .map(|i| {
            let r = inputs.row(i);
            let f: f64 = r.iter().enumerate().map(|(k, v)| ((k + 2) as f64 * v).sin()).sum();
            let scale = if rng.uniform() < 0.3 { 1.0 } else { 0.1 };
            f + rng.normal(scale)
        })
        .collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    y.iter_mut().for_each(|v| *v -= mean);
    let sigma = NoiseVector::new((0..n).map(|_| rng.uniform_in(0.01, 0.5)).collect()).unwrap();
    Instance {
        kernel,
        inputs,
        y: DVector::from_vec(y),
        sigma,
    }
}

/// `log det(K + diag σ) + yᵀ (K + diag σ)⁻¹ y` from an LU decomposition.
pub fn oracle_nll<K: Kernel>(kernel: &K, inputs: &Inputs, sigma: &[f64], y: &DVector<f64>) -> f64 {
    let kt = build_kernel_matrix(kernel, inputs).unwrap() + DMatrix::from_diagonal(&DVector::from_column_slice(sigma));
    let lu = kt.clone().lu();
    let det = lu.determinant();
    assert!(det > 0.0);
    let sol = lu.solve(y).unwrap();
    det.ln() + y.dot(&sol)
}

/// Explicit `(K + diag σ)⁻¹` via LU.
pub fn oracle_inverse<K: Kernel>(kernel: &K, inputs: &Inputs, sigma: &[f64]) -> DMatrix<f64> {
    let kt = build_kernel_matrix(kernel, inputs).unwrap() + DMatrix::from_diagonal(&DVector::from_column_slice(sigma));
    kt.try_inverse().unwrap()
}

/// Leave-one-out by retraining on `N - 1` points with nalgebra's
/// Cholesky: returns `(y_i − μ_{-i}, sqrt(var_{-i}(x_i) + σ_i))`.
pub fn brute_loocv<K: Kernel>(kernel: &K, inputs: &Inputs, sigma: &[f64], y: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = inputs.len();
    let mut errors = Vec::with_capacity(n);
    let mut stds = Vec::with_capacity(n);
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let m = keep.len();
        let mut kt = DMatrix::zeros(m, m);
        for (a, &p) in keep.iter().enumerate() {
            for (b, &q) in keep.iter().enumerate() {
                kt[(a, b)] = kernel.eval(inputs.row(p), inputs.row(q));
            }
            kt[(a, a)] += sigma[p];
        }
        let chol = kt.cholesky().expect("training block is positive definite");
        let ks = DVector::from_iterator(m, keep.iter().map(|&p| kernel.eval(inputs.row(i), inputs.row(p))));
        let yk = DVector::from_iterator(m, keep.iter().map(|&p| y[p]));
        let mean = ks.dot(&chol.solve(&yk));
        let var = kernel.eval(inputs.row(i), inputs.row(i)) - ks.dot(&chol.solve(&ks)) + sigma[i];
        errors.push(y[i] - mean);
        stds.push(var.sqrt());
    }
    (errors, stds)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// `‖a − b‖∞ / ‖b‖∞`.
pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let norm = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    diff / norm.max(f64::MIN_POSITIVE)
}
