//! Optimizers for the per-label noise vector.
//!
//! The main scheme is the multiplicative update
//!
//! ```text
//! σ_i ← σ_i · (K̃⁻¹y)_i² / ((K̃⁻¹)_ii + λ p σ_i^{p-1})
//! ```
//!
//! Both numerator and denominator are non-negative, so a non-negative start
//! stays non-negative, and a coordinate grows exactly when its gradient
//! `(K̃⁻¹)_ii − (K̃⁻¹y)_i²` is negative. Stationary points are fixed points.
//!
//! Also here: the scalar `Σ = σI` variant, a projected-gradient baseline for
//! comparison, and block-coordinate descent over `(σ, θ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Inputs;
use crate::error::{Error, Result};
use crate::gpr::{GprState, NoiseVector};
use crate::kernel::{build_kernel_matrix, Kernel};
use crate::rng::SeededRng;

/// Absolute slack below which an objective increase does not count as a
/// monotonicity violation.
pub const MONOTONE_SLACK: f64 = 1e-10;

/// Objective changes smaller than this are recomputed with
/// [`GprState::nll_increment`] instead of subtracting two evaluations.
pub const EXACT_INCREMENT_BELOW: f64 = 1e-6;

/// Relative gradient tolerance for the KKT check, as a fraction of `(K̃⁻¹)_ii`.
pub const KKT_TOL: f64 = 1e-6;

/// Fraction of `tol_sigma · ‖σ‖∞` allowed as remaining Newton distance
/// before a stopping rule may fire.
const NEWTON_REACH: f64 = 0.1;

/// Starting point `σ⁽⁰⁾`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaInit {
    /// Every entry set to this fraction of the label variance.
    VarianceFraction(f64),
    Uniform(f64),
    PerLabel(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultUpdateConfig {
    pub max_iters: usize,
    /// Stop when `‖Δσ‖∞ / ‖σ‖∞` falls below this.
    pub tol_sigma: f64,
    /// Stop when the objective changes by less than this.
    pub tol_nll: f64,
    pub sigma_init: SigmaInit,
    /// `λ` of the `λ‖σ‖_p^p` penalty.
    pub penalty_lambda: f64,
    pub penalty_p: f64,
    /// Entries that fall below this are set to exactly zero. `None` means
    /// `1e-12 · var(y)`.
    pub zero_clip: Option<f64>,
}

impl Default for MultUpdateConfig {
    fn default() -> Self {
        MultUpdateConfig {
            max_iters: 10_000,
            tol_sigma: 1e-8,
            tol_nll: 1e-10,
            sigma_init: SigmaInit::VarianceFraction(0.1),
            penalty_lambda: 0.0,
            penalty_p: 1.0,
            zero_clip: None,
        }
    }
}

impl MultUpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(self.tol_sigma >= 0.0 && self.tol_nll >= 0.0) {
            return Err(Error::Config("tolerances must be non-negative".into()));
        }
        if !(self.penalty_lambda >= 0.0 && self.penalty_lambda.is_finite()) {
            return Err(Error::Config("penalty lambda must be non-negative".into()));
        }
        if !(self.penalty_p >= 1.0 && self.penalty_p.is_finite()) {
            return Err(Error::Config("penalty exponent p must be >= 1".into()));
        }
        if let Some(c) = self.zero_clip {
            if !(c >= 0.0) {
                return Err(Error::Config("zero_clip must be non-negative".into()));
            }
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let ok = match &self.sigma_init {
            SigmaInit::VarianceFraction(f) | SigmaInit::Uniform(f) => positive(*f),
            SigmaInit::PerLabel(v) => v.iter().all(|&s| positive(s)),
        };
        if !ok {
            // zero is a fixed point of the update and could never move
            return Err(Error::Config("initial noise variances must be positive".into()));
        }
        Ok(())
    }

    /// Value of `λ‖σ‖_p^p`.
    pub fn penalty(&self, sigma: &[f64]) -> f64 {
        if self.penalty_lambda == 0.0 {
            return 0.0;
        }
        self.penalty_lambda * sigma.iter().map(|s| s.powf(self.penalty_p)).sum::<f64>()
    }

    fn penalty_grad(&self, s: f64) -> f64 {
        if self.penalty_lambda == 0.0 {
            return 0.0;
        }
        let p = self.penalty_p;
        let pow = if p == 1.0 { 1.0 } else { s.abs().powf(p - 1.0) };
        self.penalty_lambda * p * pow
    }

    /// Penalized objective minimized by the update.
    pub fn objective<K: Kernel>(&self, state: &GprState<K>) -> f64 {
        state.nll() + self.penalty(state.sigma().as_slice())
    }
}

/// Why an optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    SigmaTolerance,
    NllTolerance,
    GradientTolerance,
    MaxIters,
    LineSearchFailed,
}

/// Per-iteration record of an optimization run.
///
/// `nll_per_iter[0]` is the objective at the starting point, so
/// `nll_per_iter.len() == iters + 1`. With a penalty the recorded value is
/// the penalized objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub nll_per_iter: Vec<f64>,
    pub sigma_change_per_iter: Vec<f64>,
    /// Cumulative objective evaluations (model refits) after each iterate.
    pub evals_per_iter: Vec<usize>,
    pub iters: usize,
    pub converged: bool,
    pub monotone: bool,
    pub stop_reason: StopReason,
}

impl OptTrace {
    fn start(nll: f64) -> Self {
        OptTrace {
            nll_per_iter: vec![nll],
            sigma_change_per_iter: Vec::new(),
            evals_per_iter: vec![1],
            iters: 0,
            converged: false,
            monotone: true,
            stop_reason: StopReason::MaxIters,
        }
    }

    fn push(&mut self, nll: f64, change: f64, evals: usize) {
        if nll > self.final_nll() + MONOTONE_SLACK {
            self.monotone = false;
        }
        self.nll_per_iter.push(nll);
        self.sigma_change_per_iter.push(change);
        self.evals_per_iter.push(evals);
        self.iters += 1;
    }

    pub fn final_nll(&self) -> f64 {
        *self.nll_per_iter.last().expect("trace always holds the start")
    }

    pub fn evaluations(&self) -> usize {
        *self.evals_per_iter.last().expect("trace always holds the start")
    }

    /// Largest single-step increase of the recorded objective.
    pub fn max_increase(&self) -> f64 {
        self.nll_per_iter
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Result of a σ optimization: final noise vector, trace, and the model
/// factorized at the final σ.
#[derive(Debug, Clone)]
pub struct NoiseFit<K: Kernel> {
    pub sigma: NoiseVector,
    pub trace: OptTrace,
    pub state: GprState<K>,
}

#[derive(Debug, Clone)]
pub struct UniformFit<K: Kernel> {
    pub sigma: f64,
    pub trace: OptTrace,
    pub state: GprState<K>,
}

/// Scale of the labels used for defaults: `var(y)`, or the mean prior
/// variance when the labels are constant.
fn label_scale(y: &DVector<f64>, kmat: &DMatrix<f64>) -> f64 {
    let n = y.len() as f64;
    let mean = y.sum() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        var
    } else {
        kmat.diagonal().sum() / n
    }
}

fn initial_sigma(config: &MultUpdateConfig, n: usize, scale: f64) -> Result<Vec<f64>> {
    match &config.sigma_init {
        SigmaInit::VarianceFraction(f) => Ok(vec![f * scale; n]),
        SigmaInit::Uniform(v) => Ok(vec![*v; n]),
        SigmaInit::PerLabel(v) if v.len() == n => Ok(v.clone()),
        SigmaInit::PerLabel(v) => Err(Error::DimensionMismatch(format!(
            "initial noise has {} entries for {n} labels",
            v.len()
        ))),
    }
}

fn resolve_zero_clip(config: &MultUpdateConfig, scale: f64) -> f64 {
    config.zero_clip.unwrap_or(1e-12 * scale)
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let diff = old
        .iter()
        .zip(new)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let norm = old.iter().copied().fold(0.0, f64::max);
    if norm > 0.0 {
        diff / norm
    } else if diff > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Which stopping rule, if any, fires for this step.
fn settled(change: f64, decrease: f64, config: &MultUpdateConfig) -> Option<StopReason> {
    if change < config.tol_sigma {
        Some(StopReason::SigmaTolerance)
    } else if decrease.abs() < config.tol_nll {
        Some(StopReason::NllTolerance)
    } else {
        None
    }
}

fn revive_value(config: &MultUpdateConfig, scale: f64) -> f64 {
    config.zero_clip.unwrap_or(0.0).max(1e-12 * scale)
}

/// Zero is a fixed point of the update, so an entry snapped to zero could
/// never come back even once its gradient turns negative. Such entries
/// restart from `revive`.
fn revive_stalled_zeros<K: Kernel>(
    state: &GprState<K>,
    next: NoiseVector,
    config: &MultUpdateConfig,
    revive: f64,
) -> NoiseVector {
    let sigma = state.sigma().as_slice();
    if !sigma.contains(&0.0) {
        return next;
    }
    let grad = penalized_grad(state, config);
    let kinv = state.kinv_diag();
    let mut v = next.into_vec();
    for i in 0..v.len() {
        if sigma[i] == 0.0 && grad[i] < -KKT_TOL * kinv[i] {
            v[i] = revive;
        }
    }
    NoiseVector::new(v).expect("revived entries are positive")
}

/// Gradient of the penalized objective with respect to σ.
fn penalized_grad<K: Kernel>(state: &GprState<K>, config: &MultUpdateConfig) -> DVector<f64> {
    let sigma = state.sigma().as_slice();
    DVector::from_iterator(
        sigma.len(),
        state
            .grad_sigma()
            .iter()
            .zip(sigma)
            .map(|(g, &s)| g + config.penalty_grad(s)),
    )
}

/// Gate on both stopping rules: KKT holds and the Newton distance
/// `|g_i| / (K̃⁻¹)_ii²` of every interior entry is within
/// `NEWTON_REACH · tol_sigma · ‖σ‖∞`.
/// Near a minimum the objective flattens quadratically and slowly
/// contracting entries barely move, so either rule alone stops early.
fn stationary<K: Kernel>(state: &GprState<K>, config: &MultUpdateConfig) -> bool {
    let grad = penalized_grad(state, config);
    let sigma = state.sigma().as_slice();
    let clip = config.zero_clip.unwrap_or(0.0);
    let kinv = state.kinv_diag();
    if !kkt_satisfied(sigma, &grad, kinv, clip, KKT_TOL) {
        return false;
    }
    let reach = NEWTON_REACH * config.tol_sigma * sigma.iter().copied().fold(0.0, f64::max);
    sigma
        .iter()
        .enumerate()
        .all(|(i, &s)| s <= clip || grad[i].abs() <= reach * kinv[i] * kinv[i])
}

/// One multiplicative update from the current model.
///
/// With `λ = 0` each factor is `α_i² / (K̃⁻¹)_ii`. Entries that land below
/// `config.zero_clip` (0 when unset) become exactly zero.
pub fn mult_update_step<K: Kernel>(state: &GprState<K>, config: &MultUpdateConfig) -> NoiseVector {
    let clip = config.zero_clip.unwrap_or(0.0);
    let alpha = state.alpha();
    let kinv = state.kinv_diag();
    let next = state
        .sigma()
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let v = s * (alpha[i] * alpha[i]) / (kinv[i] + config.penalty_grad(s));
            if v < clip {
                0.0
            } else {
                v
            }
        })
        .collect();
    NoiseVector::new(next).expect("multiplicative update preserves non-negativity")
}

/// Runs the multiplicative update to convergence at fixed kernel
/// hyperparameters. `y` should be centered.
pub fn optimize_sigma<K: Kernel>(
    kernel: &K,
    inputs: &Inputs,
    y: &DVector<f64>,
    config: &MultUpdateConfig,
) -> Result<NoiseFit<K>> {
    config.validate()?;
    let kmat = build_kernel_matrix(kernel, inputs)?;
    let scale = label_scale(y, &kmat);
    let sigma0 = initial_sigma(config, y.len(), scale)?;
    optimize_sigma_from(kernel, inputs, &kmat, y, NoiseVector::new(sigma0)?, config, scale)
}

fn optimize_sigma_from<K: Kernel>(
    kernel: &K,
    inputs: &Inputs,
    kmat: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma0: NoiseVector,
    config: &MultUpdateConfig,
    scale: f64,
) -> Result<NoiseFit<K>> {
    let resolved = MultUpdateConfig {
        zero_clip: Some(resolve_zero_clip(config, scale)),
        ..config.clone()
    };
    let refit = |sigma: NoiseVector, iteration: usize| {
        GprState::fit_with_kernel_matrix(kernel, inputs, kmat, sigma, y).map_err(|e| {
            Error::Optimization {
                iteration,
                source: Box::new(e),
            }
        })
    };
    let revive = revive_value(&resolved, scale);
    let mut state = refit(sigma0, 0)?;
    let mut trace = OptTrace::start(resolved.objective(&state));
    for it in 1..=resolved.max_iters {
        let next = revive_stalled_zeros(&state, mult_update_step(&state, &resolved), &resolved, revive);
        let change = relative_change(state.sigma().as_slice(), next.as_slice());
        let next_state = refit(next, it)?;
        let direct = resolved.objective(&next_state);
        let mut step = direct - resolved.objective(&state);
        if step.abs() < EXACT_INCREMENT_BELOW {
            if let Ok(inc) = state.nll_increment(&next_state) {
                step = inc + resolved.penalty(next_state.sigma().as_slice())
                    - resolved.penalty(state.sigma().as_slice());
            }
        }
        state = next_state;
        // small steps accumulate so the trace is not dominated by rounding
        let obj = if step.abs() < EXACT_INCREMENT_BELOW {
            trace.final_nll() + step
        } else {
            direct
        };
        trace.push(obj, change, it + 1);
        if let Some(reason) = settled(change, -step, &resolved) {
            if stationary(&state, &resolved) {
                trace.stop_reason = reason;
                trace.converged = true;
                break;
            }
        }
    }
    Ok(NoiseFit {
        sigma: state.sigma().clone(),
        trace,
        state,
    })
}

/// The `Σ = σI` special case:
/// `σ ← σ · αᵀα / (tr(K̃⁻¹) + N λ p σ^{p-1})`.
pub fn optimize_sigma_uniform<K: Kernel>(
    kernel: &K,
    inputs: &Inputs,
    y: &DVector<f64>,
    config: &MultUpdateConfig,
) -> Result<UniformFit<K>> {
    config.validate()?;
    let n = y.len();
    let kmat = build_kernel_matrix(kernel, inputs)?;
    let scale = label_scale(y, &kmat);
    let init = initial_sigma(config, n, scale)?;
    let clip = resolve_zero_clip(config, scale);
    let mut sigma = init.iter().sum::<f64>() / n as f64;
    let refit = |s: f64, iteration: usize| {
        GprState::fit_with_kernel_matrix(kernel, inputs, &kmat, NoiseVector::uniform(n, s)?, y)
            .map_err(|e| Error::Optimization {
                iteration,
                source: Box::new(e),
            })
    };
    // derivative of the objective along σ·1
    let scalar_grad = |state: &GprState<K>, s: f64| {
        state.kinv_diag().sum() - state.alpha().norm_squared() + n as f64 * config.penalty_grad(s)
    };
    let mut state = refit(sigma, 0)?;
    let mut trace = OptTrace::start(config.objective(&state));
    for it in 1..=config.max_iters {
        let tr = state.kinv_diag().sum();
        let num = state.alpha().norm_squared();
        let den = tr + n as f64 * config.penalty_grad(sigma);
        let mut next = sigma * num / den;
        if next < clip {
            next = 0.0;
        }
        if sigma == 0.0 && scalar_grad(&state, sigma) < -KKT_TOL * tr {
            next = clip.max(1e-12 * scale);
        }
        let change = relative_change(&[sigma], &[next]);
        let prev = trace.final_nll();
        sigma = next;
        state = refit(sigma, it)?;
        let obj = config.objective(&state);
        trace.push(obj, change, it + 1);
        if let Some(reason) = settled(change, prev - obj, config) {
            let tr = state.kinv_diag().sum();
            let g = scalar_grad(&state, sigma);
            // at a stationary point the second derivative is ‖K̃⁻¹‖_F²
            let curvature = state.kinv_full().norm_squared();
            let ok = if sigma <= clip {
                g >= -KKT_TOL * tr
            } else {
                g.abs() <= KKT_TOL * tr && g.abs() <= NEWTON_REACH * config.tol_sigma * sigma * curvature
            };
            if ok {
                trace.stop_reason = reason;
                trace.converged = true;
                break;
            }
        }
    }
    Ok(UniformFit { sigma, trace, state })
}

/// Exact minimizer for a diagonal kernel matrix:
/// `σ*_i = max(y_i² − K_ii, 0)`.
pub fn diagonal_solution(k_diag: &[f64], y: &[f64]) -> Result<NoiseVector> {
    if k_diag.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} kernel entries for {} labels",
            k_diag.len(),
            y.len()
        )));
    }
    if k_diag.iter().any(|&k| !(k > 0.0)) {
        return Err(Error::InvalidInput("diagonal kernel entries must be positive".into()));
    }
    NoiseVector::new(
        k_diag
            .iter()
            .zip(y)
            .map(|(k, v)| (v * v - k).max(0.0))
            .collect(),
    )
}

/// Settings for [`projected_gradient_baseline`]. Shares stopping rules,
/// initialization and penalty with the multiplicative scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedGradientConfig {
    pub common: MultUpdateConfig,
    /// First trial step; `None` means `var(y)²`. Doubled after every accepted
    /// step and halved on every rejected trial.
    pub initial_step: Option<f64>,
    /// Sufficient-decrease constant of the backtracking test.
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for ProjectedGradientConfig {
    fn default() -> Self {
        ProjectedGradientConfig {
            common: MultUpdateConfig::default(),
            initial_step: None,
            armijo: 1e-4,
            max_halvings: 60,
        }
    }
}

/// KKT residual check: boundary entries need a non-negative gradient and
/// interior entries a vanishing one, both relative to `(K̃⁻¹)_ii`.
pub fn kkt_satisfied(sigma: &[f64], grad: &DVector<f64>, kinv_diag: &DVector<f64>, zero_clip: f64, tol: f64) -> bool {
    sigma.iter().enumerate().all(|(i, &s)| {
        let bound = tol * kinv_diag[i];
        if s <= zero_clip {
            grad[i] >= -bound
        } else {
            grad[i].abs() <= bound
        }
    })
}

/// `σ ← max(σ − η ∇L, 0)` with Armijo backtracking along the projection
/// arc. Every trial costs one refit and is counted in the trace.
pub fn projected_gradient_baseline<K: Kernel>(
    kernel: &K,
    inputs: &Inputs,
    y: &DVector<f64>,
    config: &ProjectedGradientConfig,
) -> Result<NoiseFit<K>> {
    let common = &config.common;
    common.validate()?;
    if let Some(step) = config.initial_step {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Config("projected-gradient step size must be positive".into()));
        }
    }
    let kmat = build_kernel_matrix(kernel, inputs)?;
    let scale = label_scale(y, &kmat);
    let clip = resolve_zero_clip(common, scale);
    let resolved = MultUpdateConfig {
        zero_clip: Some(clip),
        ..common.clone()
    };
    let sigma0 = NoiseVector::new(initial_sigma(common, y.len(), scale)?)?;
    let refit = |sigma: NoiseVector, iteration: usize| {
        GprState::fit_with_kernel_matrix(kernel, inputs, &kmat, sigma, y).map_err(|e| {
            Error::Optimization {
                iteration,
                source: Box::new(e),
            }
        })
    };

    let mut state = refit(sigma0, 0)?;
    let mut obj = common.objective(&state);
    let mut trace = OptTrace::start(obj);
    let mut evals = 1;
    let mut step = config.initial_step.unwrap_or(scale * scale);

    for it in 1..=common.max_iters {
        let sigma = state.sigma().as_slice().to_vec();
        let grad = penalized_grad(&state, common);
        if stationary(&state, &resolved) {
            trace.stop_reason = StopReason::GradientTolerance;
            trace.converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let trial: Vec<f64> = sigma
                .iter()
                .zip(grad.iter())
                .map(|(s, g)| {
                    let v = (s - step * g).max(0.0);
                    if v < clip {
                        0.0
                    } else {
                        v
                    }
                })
                .collect();
            let decrease: f64 = grad
                .iter()
                .zip(sigma.iter().zip(&trial))
                .map(|(g, (s, t))| g * (s - t))
                .sum();
            let candidate = refit(NoiseVector::new(trial)?, it)?;
            evals += 1;
            let cand_obj = common.objective(&candidate);
            if cand_obj <= obj - config.armijo * decrease && decrease > 0.0 {
                accepted = Some((candidate, cand_obj));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, cand_obj)) = accepted else {
            trace.stop_reason = StopReason::LineSearchFailed;
            break;
        };
        let change = relative_change(&sigma, candidate.sigma().as_slice());
        let prev = obj;
        state = candidate;
        obj = cand_obj;
        trace.push(obj, change, evals);
        step *= 2.0;
        if let Some(reason) = settled(change, prev - obj, &resolved) {
            if stationary(&state, &resolved) {
                trace.stop_reason = reason;
                trace.converged = true;
                break;
            }
        }
    }
    Ok(NoiseFit {
        sigma: state.sigma().clone(),
        trace,
        state,
    })
}

/// Settings for block-coordinate descent over `(σ, θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointOptConfig {
    pub outer_rounds: usize,
    /// Length of the first trial step in log-θ space, along the normalized
    /// negative gradient. Halved until the NLL decreases.
    pub learning_rate: f64,
    pub theta_max_steps: usize,
    pub max_halvings: usize,
    pub restarts: usize,
    pub restart_seed: u64,
    /// Half-width of the log-uniform restart box, in natural-log units.
    pub restart_spread: f64,
}

impl Default for JointOptConfig {
    fn default() -> Self {
        JointOptConfig {
            outer_rounds: 20,
            learning_rate: 0.5,
            theta_max_steps: 10,
            max_halvings: 30,
            restarts: 5,
            restart_seed: 0,
            restart_spread: 2.0,
        }
    }
}

impl JointOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("at least one restart is required".into()));
        }
        if !(self.restart_spread >= 0.0) {
            return Err(Error::Config("restart spread must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome<K> {
    pub initial: K,
    /// `None` when the restart failed.
    pub final_nll: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct JointFit<K: Kernel> {
    pub kernel: K,
    pub sigma: NoiseVector,
    /// Concatenated objective history of the winning restart.
    pub trace: OptTrace,
    pub state: GprState<K>,
    pub best_restart: usize,
    pub restarts: Vec<RestartOutcome<K>>,
}

/// Kernel hyperparameters drawn log-uniformly within `±spread` of `center`.
pub fn sample_restart<K: Kernel>(center: &K, spread: f64, rng: &mut SeededRng) -> Result<K> {
    let logs: Vec<f64> = center
        .log_params()
        .iter()
        .map(|c| c + rng.uniform_in(-spread, spread))
        .collect();
    center.with_log_params(&logs)
}

fn append_trace(total: &mut OptTrace, part: &OptTrace, evals_before: usize) {
    for k in 0..part.iters {
        total.push(
            part.nll_per_iter[k + 1],
            part.sigma_change_per_iter[k],
            evals_before + part.evals_per_iter[k + 1],
        );
    }
}

fn joint_single<K: Kernel>(
    initial: &K,
    inputs: &Inputs,
    y: &DVector<f64>,
    joint: &JointOptConfig,
    mult: &MultUpdateConfig,
) -> Result<JointFit<K>> {
    let mut fit = optimize_sigma(initial, inputs, y, mult)?;
    let mut kernel = initial.clone();
    let mut trace = fit.trace.clone();
    let kmat0 = build_kernel_matrix(initial, inputs)?;
    let scale = label_scale(y, &kmat0);
    let mut evals = trace.evaluations();

    for _round in 0..joint.outer_rounds {
        let mut moved = false;
        let mut state = fit.state.clone();
        let mut nll = state.nll() + mult.penalty(state.sigma().as_slice());
        for _ in 0..joint.theta_max_steps {
            let grad = state.grad_log_params()?;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                break;
            }
            let logs = kernel.log_params();
            let mut eta = joint.learning_rate;
            let mut accepted = None;
            for _ in 0..=joint.max_halvings {
                let trial: Vec<f64> = logs
                    .iter()
                    .zip(&grad)
                    .map(|(l, g)| l - eta * g / norm)
                    .collect();
                let cand_kernel = kernel.with_log_params(&trial)?;
                evals += 1;
                match GprState::fit(&cand_kernel, inputs, state.sigma().clone(), y) {
                    Ok(cand) => {
                        let cand_nll = cand.nll() + mult.penalty(cand.sigma().as_slice());
                        if cand_nll < nll {
                            accepted = Some((cand_kernel, cand, cand_nll));
                            break;
                        }
                    }
                    Err(e) => log::debug!("theta trial rejected: {e}"),
                }
                eta *= 0.5;
            }
            let Some((k, s, v)) = accepted else { break };
            trace.push(v, 0.0, evals);
            kernel = k;
            state = s;
            nll = v;
            moved = true;
        }
        let kmat = build_kernel_matrix(&kernel, inputs)?;
        let next = optimize_sigma_from(&kernel, inputs, &kmat, y, state.sigma().clone(), mult, scale)?;
        append_trace(&mut trace, &next.trace, evals);
        evals += next.trace.evaluations() - 1;
        let sigma_moved = next.trace.iters > 1;
        fit = next;
        if !moved && !sigma_moved {
            break;
        }
    }
    trace.converged = fit.trace.converged;
    trace.stop_reason = fit.trace.stop_reason;
    Ok(JointFit {
        kernel,
        sigma: fit.sigma,
        trace,
        state: fit.state,
        best_restart: 0,
        restarts: Vec::new(),
    })
}

/// Alternates full σ optimization with backtracking gradient steps on the
/// log-hyperparameters. The first restart starts at `center`, the others at
/// random points around it; the restart with the lowest final objective
/// wins, ties going to the lower restart index.
pub fn joint_optimize<K: Kernel>(
    center: &K,
    inputs: &Inputs,
    y: &DVector<f64>,
    joint: &JointOptConfig,
    mult: &MultUpdateConfig,
) -> Result<JointFit<K>> {
    joint.validate()?;
    mult.validate()?;
    let mut rng = SeededRng::new(joint.restart_seed);
    let mut outcomes = Vec::with_capacity(joint.restarts);
    let mut best: Option<(f64, JointFit<K>)> = None;
    let mut last_err = None;
    for r in 0..joint.restarts {
        let initial = if r == 0 {
            center.clone()
        } else {
            sample_restart(center, joint.restart_spread, &mut rng)?
        };
        match joint_single(&initial, inputs, y, joint, mult) {
            Ok(mut fit) => {
                let v = fit.trace.final_nll();
                outcomes.push(RestartOutcome {
                    initial,
                    final_nll: Some(v),
                });
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    fit.best_restart = r;
                    best = Some((v, fit));
                }
            }
            Err(e) => {
                log::warn!("restart {r} failed: {e}");
                outcomes.push(RestartOutcome {
                    initial,
                    final_nll: None,
                });
                last_err = Some(e);
            }
        }
    }
    match best {
        Some((_, mut fit)) => {
            fit.restarts = outcomes;
            Ok(fit)
        }
        None => Err(Error::AllRestartsFailed {
            restarts: joint.restarts,
            last: Box::new(last_err.expect("at least one restart ran")),
        }),
    }
}
