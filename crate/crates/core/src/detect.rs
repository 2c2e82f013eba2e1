//! Noisy-label flags and detection/regression metrics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Truth};
use crate::error::{Error, Result};
use crate::gpr::{GprState, NoiseVector};
use crate::kernel::Kernel;
use crate::noiseopt::{optimize_sigma, optimize_sigma_uniform, MultUpdateConfig};
use crate::rng::SeededRng;
use crate::stats;

/// Recall levels reported by default.
pub const DEFAULT_RECALL_LEVELS: [f64; 2] = [0.70, 0.95];

/// Learned noise turned into per-label flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub sigma: NoiseVector,
    /// Detection scores; the learned variances themselves.
    pub scores: Vec<f64>,
    pub threshold: f64,
    pub flags: Vec<bool>,
    pub metrics: Option<MetricSummary>,
}

/// A metric that may be undefined for the given ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined: Option<String>,
}

impl From<Result<f64>> for MetricValue {
    fn from(r: Result<f64>) -> Self {
        match r {
            Ok(v) => MetricValue {
                value: Some(v),
                undefined: None,
            },
            Err(e) => MetricValue {
                value: None,
                undefined: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtRecall {
    pub recall_level: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: MetricValue,
    pub precision_at_recall: Vec<PrecisionAtRecall>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision_at_recall_undefined: Option<String>,
    /// R² between learned σ_i and the squared injected perturbation ε_i².
    pub r2_noise: MetricValue,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae_plain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae_basic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae_full: Option<f64>,
}

/// Flags every label whose score strictly exceeds `threshold`.
pub fn flag_noisy(sigma: &NoiseVector, threshold: f64) -> Result<DetectionReport> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "threshold must be non-negative, got {threshold}"
        )));
    }
    let scores = sigma.as_slice().to_vec();
    let flags = scores.iter().map(|&s| s > threshold).collect();
    Ok(DetectionReport {
        sigma: sigma.clone(),
        scores,
        threshold,
        flags,
        metrics: None,
    })
}

/// Ground-truth-free threshold: `median(σ) + 3·MAD(σ)`.
pub fn default_threshold(sigma: &NoiseVector) -> f64 {
    let mut v = sigma.as_slice().to_vec();
    let med = stats::median(&mut v).unwrap_or(0.0);
    let mad = stats::mad(sigma.as_slice()).unwrap_or(0.0);
    (med + 3.0 * mad).max(0.0)
}

fn check_lengths(scores: &[f64], truth: &[bool]) -> Result<()> {
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} truth flags",
            scores.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Area under the ROC curve in its Mann–Whitney form: the probability that
/// a corrupted label outscores a clean one, ties counting one half.
///
/// Computed from mid-ranks in `O(n log n)`.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    check_lengths(scores, truth)?;
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one corrupted and one clean label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| truth[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Precision at the first operating point (thresholds swept over distinct
/// scores, highest first) whose recall reaches each requested level.
pub fn precision_at_recall(scores: &[f64], truth: &[bool], levels: &[f64]) -> Result<Vec<PrecisionAtRecall>> {
    check_lengths(scores, truth)?;
    if let Some(bad) = levels.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::InvalidInput(format!("recall level {bad} outside (0, 1]")));
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric(
            "precision at recall needs at least one corrupted label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // operating points (recall, precision) after admitting each tie group
    let mut points = Vec::new();
    let (mut tp, mut admitted) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += usize::from(truth[order[i]]);
            admitted += 1;
            i += 1;
        }
        points.push((tp as f64 / n_pos as f64, tp as f64 / admitted as f64));
    }
    Ok(levels
        .iter()
        .map(|&level| {
            let &(_, precision) = points
                .iter()
                .find(|(recall, _)| *recall >= level)
                .expect("admitting every label reaches recall 1");
            PrecisionAtRecall {
                recall_level: level,
                precision,
            }
        })
        .collect())
}

/// Coefficient of determination of `sigma` as a predictor of
/// `injected_sq_noise`; may be negative.
pub fn r2_noise(sigma: &[f64], injected_sq_noise: &[f64]) -> Result<f64> {
    if sigma.len() != injected_sq_noise.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} noise estimates for {} targets",
            sigma.len(),
            injected_sq_noise.len()
        )));
    }
    let mean = stats::mean(injected_sq_noise);
    let ss_tot: f64 = injected_sq_noise.iter().map(|t| (t - mean).powi(2)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::UndefinedMetric("R² target has zero variance".into()));
    }
    let ss_res: f64 = sigma
        .iter()
        .zip(injected_sq_noise)
        .map(|(s, t)| (s - t).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// AUC, precision at each recall level and R² against ground truth.
/// Undefined metrics are recorded rather than propagated.
pub fn evaluate_detection(sigma: &NoiseVector, truth: &Truth, recall_levels: &[f64]) -> MetricSummary {
    let scores = sigma.as_slice();
    let (precision_at_recall, precision_at_recall_undefined) =
        match precision_at_recall(scores, &truth.corrupted, recall_levels) {
            Ok(p) => (p, None),
            Err(e) => (Vec::new(), Some(e.to_string())),
        };
    MetricSummary {
        auc: roc_auc(scores, &truth.corrupted).into(),
        precision_at_recall,
        precision_at_recall_undefined,
        r2_noise: r2_noise(scores, &truth.squared_noise()).into(),
        mae_plain: None,
        mae_basic: None,
        mae_full: None,
    }
}

/// Noise model compared in cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// `Σ = 0`.
    Plain,
    /// `Σ = σI`.
    Basic,
    /// `Σ = diag(σ)`.
    Full,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(NoiseMode::Plain),
            "basic" => Ok(NoiseMode::Basic),
            "full" => Ok(NoiseMode::Full),
            other => Err(Error::Config(format!("unknown mode '{other}' (plain|basic|full)"))),
        }
    }
}

/// Fits the chosen noise model on `(inputs, y)` at fixed kernel parameters.
pub fn fit_mode<K: Kernel>(
    kernel: &K,
    inputs: &crate::data::Inputs,
    y: &DVector<f64>,
    mode: NoiseMode,
    config: &MultUpdateConfig,
) -> Result<GprState<K>> {
    match mode {
        NoiseMode::Plain => GprState::fit(kernel, inputs, NoiseVector::zeros(y.len()), y),
        NoiseMode::Basic => Ok(optimize_sigma_uniform(kernel, inputs, y, config)?.state),
        NoiseMode::Full => Ok(optimize_sigma(kernel, inputs, y, config)?.state),
    }
}

/// Seeded fold assignment: a Fisher–Yates permutation cut into `folds`
/// contiguous chunks whose sizes differ by at most one. Each fold is sorted.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let perm = SeededRng::new(seed).permutation(n);
    (0..folds)
        .map(|f| {
            let mut idx = perm[f * n / folds..(f + 1) * n / folds].to_vec();
            idx.sort_unstable();
            idx
        })
        .collect()
}

/// K-fold cross-validated mean absolute error of the posterior mean.
///
/// Labels are centered once on the whole dataset; each fold trains on the
/// rest and predicts its held-out labels. Returns the average of the
/// per-fold MAEs.
pub fn cv_mae<K: Kernel>(
    data: &Dataset,
    kernel: &K,
    mode: NoiseMode,
    folds: usize,
    seed: u64,
    config: &MultUpdateConfig,
) -> Result<f64> {
    let n = data.len();
    if folds < 2 || n < folds {
        return Err(Error::Config(format!(
            "need 2 <= folds <= N, got {folds} folds for {n} samples"
        )));
    }
    let y = data.centered_labels();
    let mut total = 0.0;
    for (f, test) in fold_indices(n, folds, seed).iter().enumerate() {
        let mut in_test = vec![false; n];
        for &i in test {
            in_test[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        let inputs = data.inputs().select(&train);
        let y_train = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let fold_err = |e: Error| Error::Fold {
            fold: f,
            source: Box::new(e),
        };
        let state = fit_mode(kernel, &inputs, &y_train, mode, config).map_err(fold_err)?;
        let mut abs = 0.0;
        for &i in test {
            let p = state.predict(data.inputs().row(i)).map_err(fold_err)?;
            abs += (data.uncenter(p.mean) - data.labels()[i]).abs();
        }
        total += abs / test.len() as f64;
    }
    Ok(total / folds as f64)
}
