//! JSON report written by `fit` and `detect`.
//!
//! The schema is versioned by `schema_version`; fields are only ever added.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::MetricSummary;
use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::noiseopt::{OptTrace, StopReason};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        ToolInfo {
            name: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub n: usize,
    pub dim: usize,
    pub y_center: f64,
    pub has_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    /// `plain`, `basic` or `full`.
    pub mode: String,
    pub joint: bool,
    pub kernel: KernelParams,
    pub penalty_lambda: f64,
    pub penalty_p: f64,
    /// The scalar noise variance of the `basic` model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_scalar: Option<f64>,
    pub jitter: f64,
    pub final_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub index: usize,
    pub sigma: f64,
    pub score: f64,
    pub flag: bool,
    pub loocv_error: f64,
    pub loocv_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrupted: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub iters: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub monotone: bool,
    pub stop_reason: StopReason,
    pub initial_nll: f64,
    pub final_nll: f64,
}

impl From<&OptTrace> for TraceSummary {
    fn from(t: &OptTrace) -> Self {
        TraceSummary {
            iters: t.iters,
            evaluations: t.evaluations(),
            converged: t.converged,
            monotone: t.monotone,
            stop_reason: t.stop_reason,
            initial_nll: t.nll_per_iter[0],
            final_nll: t.final_nll(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub tool: ToolInfo,
    pub command: String,
    /// Every resolved setting, after flags, config file and defaults.
    pub config: BTreeMap<String, String>,
    pub dataset: DatasetInfo,
    pub model: ModelInfo,
    pub threshold: f64,
    /// `explicit` or `median+3mad`.
    pub threshold_rule: String,
    pub per_label: Vec<LabelEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricSummary>,
    pub trace: TraceSummary,
    pub notes: Vec<String>,
}

impl ReportDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serializable");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: ReportDocument = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        if doc.per_label.len() != doc.dataset.n {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!(
                    "per_label has {} entries, dataset.n is {}",
                    doc.per_label.len(),
                    doc.dataset.n
                ),
            });
        }
        Ok(doc)
    }
}
