//! Artificial gate schedules: control conditions that replace predicted or
//! human fixation durations. Each schedule is sampled once from its seed
//! and reused unchanged across every epoch.

use crate::error::{Error, Result};
use crate::rng::RngPool;
use crate::schedule::GateSchedule;
use rand::Rng;
use std::collections::HashMap;

/// The four ablation schedules.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArtificialKind {
    /// Independent uniform draw per token occurrence.
    Random,
    /// One uniform draw per token type, shared by all occurrences.
    RandomBt,
    /// Constant maximum: every component always active.
    Full,
    /// Frequency-ranked: the most frequent types get the shortest
    /// durations, with types spread uniformly over the K bins.
    Freq,
}

impl ArtificialKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => ArtificialKind::Random,
            "random_bt" => ArtificialKind::RandomBt,
            "full" => ArtificialKind::Full,
            "freq" => ArtificialKind::Freq,
            other => {
                return Err(Error::invalid(
                    "artificial_fixations",
                    format!("unknown kind '{other}'"),
                ))
            }
        })
    }
}

/// Builds a hard schedule over a token stream.
pub fn artificial_fixations(
    kind: ArtificialKind,
    tokens: &[String],
    components: usize,
    seed: u64,
    frequencies: Option<&HashMap<String, u64>>,
) -> Result<GateSchedule> {
    if components < 1 {
        return Err(Error::invalid("artificial_fixations", "components must be >= 1"));
    }
    let values = match kind {
        ArtificialKind::Full => vec![components; tokens.len()],
        ArtificialKind::Random => {
            let mut rng = RngPool::new(seed).stream("gates-random");
            tokens
                .iter()
                .map(|_| rng.gen_range(1..=components))
                .collect()
        }
        ArtificialKind::RandomBt => {
            // Types draw in sorted order so the assignment is independent
            // of occurrence order.
            let mut types: Vec<&String> = tokens.iter().collect();
            types.sort_unstable();
            types.dedup();
            let mut rng = RngPool::new(seed).stream("gates-by-type");
            let assignment: HashMap<&String, usize> = types
                .into_iter()
                .map(|t| (t, rng.gen_range(1..=components)))
                .collect();
            tokens.iter().map(|t| assignment[t]).collect()
        }
        ArtificialKind::Freq => {
            let table = frequencies.ok_or_else(|| {
                Error::invalid("artificial_fixations", "freq schedule needs a frequency table")
            })?;
            let mut types: Vec<&String> = tokens.iter().collect();
            types.sort_unstable();
            types.dedup();
            let n = types.len();
            // Rank by frequency descending, name ascending for ties;
            // partition ranks into K equal-count buckets so durations stay
            // uniform over types. Highest frequency -> duration 1.
            let mut ranked = types;
            ranked.sort_by(|a, b| {
                let fa = table.get(*a).copied().unwrap_or(0);
                let fb = table.get(*b).copied().unwrap_or(0);
                fb.cmp(&fa).then_with(|| a.cmp(b))
            });
            let assignment: HashMap<&String, usize> = ranked
                .into_iter()
                .enumerate()
                .map(|(rank, t)| (t, rank * components / n + 1))
                .collect();
            tokens.iter().map(|t| assignment[t]).collect()
        }
    };
    GateSchedule::hard(values, components)
}
