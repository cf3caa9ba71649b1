//! Per-epoch run metrics.
//!
//! Metrics records are deterministic for a given config and seed; wall time
//! is reported alongside through [`EpochTimed`] so callers can log it
//! separately without breaking byte-identical metrics files.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch (NLL for LM, cross-entropy for
    /// sentiment; excludes the fixation term).
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_ppl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_acc: Option<f64>,
    /// Mean variance-weighted fixation loss (multi-task runs only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fix_loss: Option<f64>,
    pub param_count: usize,
    pub fp_param_count: usize,
    pub seed: u64,
}

/// Epoch metrics plus wall-clock seconds (kept out of the metrics record).
#[derive(Clone, Debug)]
pub struct EpochTimed {
    pub metrics: EpochMetrics,
    pub wall_s: f64,
}
