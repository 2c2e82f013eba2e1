//! Gaussian process regression with a per-label noise vector.
//!
//! The model covariance is `K̃ = K + diag(σ)`. A fitted [`GprState`] caches
//! the Cholesky factor of `K̃`, `α = K̃⁻¹y` and `diag(K̃⁻¹)`; everything the
//! noise optimizers need per iteration comes from that cache.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Inputs;
use crate::error::{Error, Result};
use crate::kernel::{build_kernel_matrix, Kernel};
use crate::linalg::{cholesky_with_jitter, lower_triangular_inverse};

/// Per-label noise variances, all `>= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NoiseVector(Vec<f64>);

impl NoiseVector {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if let Some(bad) = sigma.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "noise variances must be finite and non-negative, got {bad}"
            )));
        }
        Ok(NoiseVector(sigma))
    }

    pub fn zeros(n: usize) -> Self {
        NoiseVector(vec![0.0; n])
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        NoiseVector::new(vec![value; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for NoiseVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        NoiseVector::new(v)
    }
}

impl From<NoiseVector> for Vec<f64> {
    fn from(v: NoiseVector) -> Self {
        v.0
    }
}

/// Posterior predictive distribution at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

/// Closed-form leave-one-out errors `y_i - μ_{-i}` and standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct LoocvResult {
    pub errors: DVector<f64>,
    pub stds: DVector<f64>,
}

/// Factorized regularized covariance for fixed kernel, noise and labels.
#[derive(Debug, Clone)]
pub struct GprState<K: Kernel> {
    kernel: K,
    inputs: Inputs,
    sigma: NoiseVector,
    y: DVector<f64>,
    chol: DMatrix<f64>,
    chol_inv: DMatrix<f64>,
    jitter: f64,
    alpha: DVector<f64>,
    /// `yᵀ K̃⁻¹ y`.
    data_fit: f64,
    kinv_diag: DVector<f64>,
    kinv_full: OnceLock<DMatrix<f64>>,
}

// Both the diagonal and the full inverse go through this so that
// diag(K̃⁻¹) is bitwise identical however it is obtained.
fn inverse_entry(chol_inv: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let start = i.max(j);
    let ci = chol_inv.column(i);
    let cj = chol_inv.column(j);
    let mut s = 0.0;
    for k in start..chol_inv.nrows() {
        s += ci[k] * cj[k];
    }
    s
}

impl<K: Kernel> GprState<K> {
    /// Builds the kernel matrix and factorizes `K + diag(σ)`.
    pub fn fit(kernel: &K, inputs: &Inputs, sigma: NoiseVector, y: &DVector<f64>) -> Result<Self> {
        let k = build_kernel_matrix(kernel, inputs)?;
        Self::fit_with_kernel_matrix(kernel, inputs, &k, sigma, y)
    }

    /// As [`GprState::fit`] with a precomputed kernel matrix, for callers
    /// that refit repeatedly at fixed hyperparameters.
    pub fn fit_with_kernel_matrix(
        kernel: &K,
        inputs: &Inputs,
        kmat: &DMatrix<f64>,
        sigma: NoiseVector,
        y: &DVector<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if inputs.len() != n || sigma.len() != n || kmat.nrows() != n || kmat.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "labels {n}, inputs {}, noise {}, kernel {}x{}",
                inputs.len(),
                sigma.len(),
                kmat.nrows(),
                kmat.ncols()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite label".into()));
        }
        let mut regularized = kmat.clone();
        for (i, s) in sigma.as_slice().iter().enumerate() {
            regularized[(i, i)] += s;
        }
        let (chol, jitter) = cholesky_with_jitter(&regularized)?;
        let z = chol
            .solve_lower_triangular(y)
            .expect("cholesky factor has a positive diagonal");
        let data_fit = z.norm_squared();
        let alpha = chol
            .tr_solve_lower_triangular(&z)
            .expect("cholesky factor has a positive diagonal");
        let chol_inv = lower_triangular_inverse(&chol);
        let kinv_diag = DVector::from_iterator(n, (0..n).map(|i| inverse_entry(&chol_inv, i, i)));
        Ok(GprState {
            kernel: kernel.clone(),
            inputs: inputs.clone(),
            sigma,
            y: y.clone(),
            chol,
            chol_inv,
            jitter,
            alpha,
            data_fit,
            kinv_diag,
            kinv_full: OnceLock::new(),
        })
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn inputs(&self) -> &Inputs {
        &self.inputs
    }

    pub fn sigma(&self) -> &NoiseVector {
        &self.sigma
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Lower Cholesky factor of `K̃ + jitter·I`.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Diagonal shift added to make the factorization succeed (usually 0).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `K̃⁻¹ y`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// `diag(K̃⁻¹)`.
    pub fn kinv_diag(&self) -> &DVector<f64> {
        &self.kinv_diag
    }

    /// Full `K̃⁻¹`, computed on first use.
    pub fn kinv_full(&self) -> &DMatrix<f64> {
        self.kinv_full.get_or_init(|| {
            let n = self.len();
            let mut inv = DMatrix::zeros(n, n);
            for j in 0..n {
                inv[(j, j)] = self.kinv_diag[j];
                for i in j + 1..n {
                    let v = inverse_entry(&self.chol_inv, i, j);
                    inv[(i, j)] = v;
                    inv[(j, i)] = v;
                }
            }
            inv
        })
    }

    /// `log det K̃` from the Cholesky diagonal.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Negative log-likelihood without its constant:
    /// `log det K̃ + yᵀ K̃⁻¹ y`. The quadratic term is `‖L⁻¹y‖²`, which
    /// stays accurate when `K̃` is badly conditioned.
    pub fn nll(&self) -> f64 {
        self.log_det() + self.data_fit
    }

    /// `∂L/∂σ = diag(K̃⁻¹) − α ⊙ α`.
    pub fn grad_sigma(&self) -> DVector<f64> {
        self.kinv_diag.zip_map(&self.alpha, |d, a| d - a * a)
    }

    /// Gradient with respect to every entry of `Σ`: `K̃⁻¹ − α αᵀ`. Its
    /// diagonal is [`GprState::grad_sigma`].
    pub fn grad_sigma_full_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let inv = self.kinv_full();
        let mut g = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                g[(i, j)] = inv[(i, j)] - self.alpha[i] * self.alpha[j];
            }
        }
        g
    }

    /// `∂L/∂θ_j = tr(K̃⁻¹ ∂K/∂θ_j) − αᵀ (∂K/∂θ_j) α` for each supplied
    /// kernel-matrix derivative. The trace is the elementwise sum of the two
    /// symmetric matrices, so the product is never formed.
    pub fn grad_theta(&self, dk_dtheta: &[DMatrix<f64>]) -> Result<Vec<f64>> {
        let n = self.len();
        let inv = self.kinv_full();
        dk_dtheta
            .iter()
            .map(|dk| {
                if dk.nrows() != n || dk.ncols() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "kernel derivative is {}x{}, expected {n}x{n}",
                        dk.nrows(),
                        dk.ncols()
                    )));
                }
                let trace = inv.component_mul(dk).sum();
                let quad = self.alpha.dot(&(dk * &self.alpha));
                Ok(trace - quad)
            })
            .collect()
    }

    /// Gradient of the NLL with respect to the kernel's log-hyperparameters.
    pub fn grad_log_params(&self) -> Result<Vec<f64>> {
        self.grad_theta(&self.kernel.log_param_gradients(&self.inputs))
    }

    /// Posterior at `x_star` in centered label units.
    pub fn predict(&self, x_star: &[f64]) -> Result<Posterior> {
        if x_star.len() != self.inputs.dim() {
            return Err(Error::DimensionMismatch(format!(
                "query has dimension {}, model expects {}",
                x_star.len(),
                self.inputs.dim()
            )));
        }
        if x_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite query point".into()));
        }
        let n = self.len();
        let k_star = DVector::from_iterator(
            n,
            (0..n).map(|i| self.kernel.eval(x_star, self.inputs.row(i))),
        );
        let mean = k_star.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&k_star)
            .expect("cholesky factor has a positive diagonal");
        let raw = self.kernel.eval(x_star, x_star) - v.norm_squared();
        if raw < -1e-8 {
            log::warn!("posterior variance {raw:e} clamped to 0");
        }
        Ok(Posterior {
            mean,
            variance: raw.max(0.0),
        })
    }

    /// Closed-form leave-one-out residuals on the regularized model:
    /// `e_i = α_i / (K̃⁻¹)_ii`, `s_i = (K̃⁻¹)_ii^{-1/2}`.
    pub fn loocv(&self) -> LoocvResult {
        LoocvResult {
            errors: self.alpha.component_div(&self.kinv_diag),
            stds: self.kinv_diag.map(|d| 1.0 / d.sqrt()),
        }
    }

    /// Largest violation of `e_i² ≤ s_i²`, relative to `s_i²`; non-positive
    /// when every leave-one-out error is contained by its std.
    pub fn loocv_bound_violation(&self) -> f64 {
        let l = self.loocv();
        l.errors
            .iter()
            .zip(l.stds.iter())
            .map(|(e, s)| (e * e - s * s) / (s * s))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `next.nll() − self.nll()` for a model that differs from this one only
    /// on the diagonal (noise and jitter), same kernel matrix and labels.
    ///
    /// Evaluated as `log det(I + L⁻¹DL⁻ᵀ) − αᵀDα'` with `D` the diagonal
    /// change, so the rounding error scales with `D` rather than with `K̃`.
    /// Subtracting two direct evaluations cannot resolve changes below
    /// roughly `ε · N · ‖K̃‖ · ‖K̃⁻¹‖`.
    pub fn nll_increment(&self, next: &GprState<K>) -> Result<f64> {
        let n = self.len();
        if next.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "increment between models of size {n} and {}",
                next.len()
            )));
        }
        let d = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                (next.sigma.as_slice()[i] + next.jitter) - (self.sigma.as_slice()[i] + self.jitter)
            }),
        );
        let scaled = DMatrix::from_fn(n, n, |i, k| self.chol_inv[(i, k)] * d[k]);
        let mut m = scaled * self.chol_inv.transpose();
        for i in 0..n {
            m[(i, i)] += 1.0;
        }
        let chol = m.cholesky().ok_or(Error::NotPositiveDefinite {
            pivot: f64::NAN,
            jitter: 0.0,
        })?;
        let l = chol.l_dirty();
        let log_det: f64 = 2.0 * (0..n).map(|i| (l[(i, i)] - 1.0).ln_1p()).sum::<f64>();
        let quad: f64 = (0..n).map(|i| d[i] * self.alpha[i] * next.alpha[i]).sum();
        Ok(log_det - quad)
    }
}
