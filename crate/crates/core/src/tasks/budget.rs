//! Parameter budgeting: counting non-embedding parameters and fitting the
//! hidden dimension to a budget.
//!
//! Comparing architectures at equal hidden width is unfair to narrow
//! baselines — a K-component model at the same width has roughly K times
//! the parameters — so experiments fix a parameter budget instead and let
//! each variant take the widest hidden dimension that fits. The embedding
//! table and the tied output projection never count; the fixation
//! predictor, an auxiliary model, is budgeted separately.

use crate::error::{Error, Result};
use crate::gated::ModelSpec;

/// Which task head sits on top of the trunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Lm,
    Sentiment,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lm" => Ok(Task::Lm),
            "sentiment" => Ok(Task::Sentiment),
            other => Err(Error::config(format!("unknown task '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Lm => "lm",
            Task::Sentiment => "sentiment",
        }
    }
}

fn head_params(task: Task, emb_dim: usize, model_out: usize) -> usize {
    let fc1 = emb_dim * model_out + emb_dim;
    match task {
        Task::Lm => fc1,
        Task::Sentiment => fc1 + 2 * emb_dim + 2,
    }
}

/// Non-embedding parameter count of a trunk plus its task head.
pub fn non_embedding_param_count(spec: &ModelSpec, task: Task) -> usize {
    let model = spec.build::<f64>("model");
    model.param_count() + head_params(task, spec.emb_dim, model.out_dim())
}

/// Largest hidden dimension whose non-embedding parameter count stays
/// within `budget`. The count is monotone in the hidden dimension.
pub fn fit_hidden_dim(template: &ModelSpec, task: Task, budget: usize) -> Result<usize> {
    let count_at = |hidden: usize| {
        let mut spec = template.clone();
        spec.hidden = hidden;
        non_embedding_param_count(&spec, task)
    };
    if count_at(1) > budget {
        return Err(Error::config(format!(
            "budget {budget} is below the minimum model size {}",
            count_at(1)
        )));
    }
    let mut hi = 2usize;
    while count_at(hi) <= budget {
        hi *= 2;
    }
    let mut lo = hi / 2; // count(lo) <= budget < count(hi)
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if count_at(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gated::Variant;

    fn spec(variant: Variant, components: usize, layers: usize, hidden: usize, emb: usize) -> ModelSpec {
        ModelSpec {
            variant,
            components,
            layers,
            hidden,
            emb_dim: emb,
            proj_dim: None,
            steepness: 4.0,
            inter_dropout: 0.0,
        }
    }

    #[test]
    fn vanilla_rnn_count_matches_hand_formula() {
        // input 3, hidden 2: 3*2 + 2 + 2*2 + 2 = 14 for the recurrent block.
        let s = spec(Variant::Rnn, 1, 1, 2, 3);
        let trunk = s.build::<f64>("model");
        assert_eq!(trunk.param_count(), 14);
    }

    #[test]
    fn fgp_doubles_the_recurrent_count_per_component() {
        let s = spec(Variant::FgpRnn, 2, 1, 2, 3);
        let trunk = s.build::<f64>("model");
        assert_eq!(trunk.param_count(), 28);
    }

    #[test]
    fn count_is_monotone_in_hidden_dim() {
        for variant in [
            Variant::Rnn,
            Variant::Lstm,
            Variant::FgpRnn,
            Variant::FgpLstm,
            Variant::FglRnn,
            Variant::FglLstm,
        ] {
            let mut prev = 0;
            for hidden in 1..20 {
                let s = spec(variant, 3, 2, hidden, 8);
                let count = non_embedding_param_count(&s, Task::Lm);
                assert!(count > prev, "{variant:?} at hidden {hidden}");
                prev = count;
            }
        }
    }

    #[test]
    fn fitted_dim_is_maximal_within_budget() {
        let template = spec(Variant::FgpLstm, 4, 1, 0, 32);
        let budget = 1_000_000;
        let h = fit_hidden_dim(&template, Task::Lm, budget).unwrap();
        let mut fitted = template.clone();
        fitted.hidden = h;
        assert!(non_embedding_param_count(&fitted, Task::Lm) <= budget);
        fitted.hidden = h + 1;
        assert!(non_embedding_param_count(&fitted, Task::Lm) > budget);
    }

    #[test]
    fn impossible_budget_is_rejected() {
        let template = spec(Variant::Lstm, 1, 1, 0, 64);
        assert!(fit_hidden_dim(&template, Task::Lm, 10).is_err());
    }

    #[test]
    fn sentiment_head_adds_output_layer() {
        let s = spec(Variant::Lstm, 1, 1, 16, 8);
        let lm = non_embedding_param_count(&s, Task::Lm);
        let sa = non_embedding_param_count(&s, Task::Sentiment);
        assert_eq!(sa - lm, 2 * 8 + 2);
    }
}
