//! Identification and quantification of real-valued label noise with
//! Gaussian process regression.
//!
//! Every label `y_i` gets its own noise variance `σ_i`, and the model
//! covariance becomes `K + diag(σ)`. The noise vector is fitted by maximum
//! likelihood with a multiplicative update that keeps `σ ≥ 0` by
//! construction. Labels with large learned `σ_i` are the suspected noisy
//! ones.
//!
//! Modules:
//!
//! * [`kernel`]: covariance functions (RBF) and their hyperparameter gradients
//! * [`gpr`]: factorized model, prediction, likelihood, gradients and
//!   closed-form leave-one-out residuals
//! * [`noiseopt`]: the multiplicative update, its scalar and penalized
//!   variants, a projected-gradient baseline and joint `(σ, θ)` fitting
//! * [`detect`]: flags and detection/regression metrics
//! * [`data`]: generators, noise injection and CSV I/O
//! * [`cli`]: the `noisy-gpr` command-line front end

pub mod cli;
pub mod data;
pub mod detect;
pub mod error;
pub mod gpr;
pub mod kernel;
pub mod linalg;
pub mod noiseopt;
pub mod report;
pub mod rng;
pub mod stats;

pub use data::{Dataset, Inputs, NoiseInjectionSpec, Truth};
pub use detect::{DetectionReport, MetricSummary, NoiseMode};
pub use error::{Error, Result};
pub use gpr::{GprState, LoocvResult, NoiseVector, Posterior};
pub use kernel::{Kernel, KernelParams};
pub use noiseopt::{JointOptConfig, MultUpdateConfig, OptTrace, SigmaInit};
