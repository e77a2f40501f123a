//! Fit report persisted as JSON; `infer` appends its covariance block.

use std::path::Path;

use anyhow::{Context, Result};
use recurode::inference::CovarianceEstimate;
use recurode::model::{ParamVector, ResolvedModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecEcho {
    pub variant: String,
    pub order_gamma: usize,
    pub order_g: usize,
    pub knot_rule: String,
    pub knot_exponent_gamma: f64,
    pub knot_exponent_g: f64,
    pub lt_q: Option<String>,
    pub t0: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceBlock {
    pub resamples: Option<usize>,
    #[serde(flatten)]
    pub estimate: CovarianceEstimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub n_subjects: usize,
    pub n_events: usize,
    pub spec: SpecEcho,
    /// Resolved model with realized knot sequences and constraints.
    pub model: ResolvedModel,
    pub theta: ParamVector,
    pub loglik: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub inference: Option<InferenceBlock>,
}

impl Report {
    pub fn load(path: &Path) -> Result<Report> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read report {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid report {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        crate::io::write_atomic(path, text.as_bytes())
    }
}
