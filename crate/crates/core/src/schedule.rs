//! Gate schedules and gating coefficients.
//!
//! A schedule carries one gate value per token. Hard schedules hold integer
//! fixation bins in `{1..K}` and act as data (no gradient is defined with
//! respect to them). Soft schedules hold continuous normalized durations,
//! which become differentiable gating coefficients through a steepened
//! sigmoid.

use crate::error::{Error, Result};

/// Per-token gate signal for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub enum GateSchedule {
    /// Integer bins `d_t ∈ {1..max_gate}`.
    Hard { values: Vec<usize>, max_gate: usize },
    /// Continuous normalized durations; nominally in `[0, max_gate]` but
    /// deliberately unclamped (trained predictors produce values outside
    /// the range, e.g. negative durations for unknown tokens).
    Soft { values: Vec<f64>, max_gate: usize },
}

impl GateSchedule {
    pub fn hard(values: Vec<usize>, max_gate: usize) -> Result<Self> {
        let schedule = GateSchedule::Hard { values, max_gate };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn soft(values: Vec<f64>, max_gate: usize) -> Self {
        GateSchedule::Soft { values, max_gate }
    }

    pub fn validate(&self) -> Result<()> {
        if let GateSchedule::Hard { values, max_gate } = self {
            for &d in values {
                if d < 1 || d > *max_gate {
                    return Err(Error::GateOutOfRange {
                        got: d,
                        max: *max_gate,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        match self {
            GateSchedule::Hard { values, .. } => values.len(),
            GateSchedule::Soft { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_gate(&self) -> usize {
        match self {
            GateSchedule::Hard { max_gate, .. } | GateSchedule::Soft { max_gate, .. } => *max_gate,
        }
    }
}

/// Gating coefficients for one token: `alpha[k-1]` is the keep-old weight of
/// component `k`, non-decreasing in `k` for a fixed duration.
#[derive(Clone, Debug)]
pub struct GateCoefficients {
    pub alphas: Vec<f64>,
    pub steepness: f64,
}

/// `alpha_k = sigmoid((k - 1 - dbar) * s)` for `k = 1..=components`.
/// Durations outside `[0, components]` are fine; the sigmoid saturates.
pub fn gate_coefficients(dbar: f64, components: usize, steepness: f64) -> GateCoefficients {
    let alphas = (1..=components)
        .map(|k| sigmoid((k as f64 - 1.0 - dbar) * steepness))
        .collect();
    GateCoefficients {
        alphas,
        steepness,
    }
}

/// Convex combination `(1 - alpha) * candidate + alpha * previous`: the
/// differentiable replacement for the hard keep/update branch.
pub fn soft_gate_combine(candidate: &[f64], previous: &[f64], alpha: f64) -> Vec<f64> {
    candidate
        .iter()
        .zip(previous)
        .map(|(&c, &p)| (1.0 - alpha) * c + alpha * p)
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
