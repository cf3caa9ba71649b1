//! Flat key-value experiment configuration.
//!
//! The config file is plain text, one `key = value` per line, `#` comments.
//! Unknown keys are rejected by name so typos fail loudly before a run
//! spends any time training.

use crate::error::{Error, Result};
use crate::gated::{ModelSpec, Variant};
use crate::tasks::budget::{fit_hidden_dim, Task};
use crate::tasks::fixations::ArtificialKind;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Where a model's gate values come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateSource {
    /// No gating (vanilla trunks).
    None,
    /// Hard bins discretized from human recordings shipped with the task
    /// corpus.
    Human,
    /// Hard bins from a frozen pretrained predictor.
    FixedFp,
    /// Soft gates from a jointly trained predictor.
    Adaptive,
    Artificial(ArtificialKind),
}

impl GateSource {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => GateSource::None,
            "human" => GateSource::Human,
            "fixed_fp" => GateSource::FixedFp,
            "adaptive" => GateSource::Adaptive,
            other => GateSource::Artificial(ArtificialKind::parse(other).map_err(|_| {
                Error::config(format!("unknown gate_source '{other}'"))
            })?),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            GateSource::None => "none",
            GateSource::Human => "human",
            GateSource::FixedFp => "fixed_fp",
            GateSource::Adaptive => "adaptive",
            GateSource::Artificial(ArtificialKind::Random) => "random",
            GateSource::Artificial(ArtificialKind::RandomBt) => "random_bt",
            GateSource::Artificial(ArtificialKind::Full) => "full",
            GateSource::Artificial(ArtificialKind::Freq) => "freq",
        }
    }
}

/// Scope of the duration-normalization statistics in the adaptive path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatsScope {
    /// Statistics from the current batch, differentiable through them.
    Batch,
    /// Exponential running statistics entering as constants.
    Running,
}

/// One experiment, fully specified.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub task: Task,
    pub variant: Variant,
    pub k_components: usize,
    pub n_layers: usize,
    pub hidden_dim: Option<usize>,
    pub param_budget: Option<usize>,
    pub gate_source: GateSource,
    pub multi_task: bool,
    pub lambda: f64,
    pub steepness: f64,
    pub epsilon: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dropout_embed: f64,
    pub dropout_other: f64,
    pub emb_dim: usize,
    pub mean_seq_len: usize,
    pub grad_clip: f64,
    pub min_freq: usize,
    pub train_fraction: f64,
    pub proj_dim: Option<usize>,
    pub stats_scope: StatsScope,
    pub train_corpus: PathBuf,
    pub eyetrack_corpus: Option<PathBuf>,
    pub fp_model: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "task",
    "variant",
    "k_components",
    "n_layers",
    "hidden_dim",
    "param_budget",
    "gate_source",
    "multi_task",
    "lambda",
    "s",
    "epsilon",
    "lr",
    "batch_size",
    "epochs",
    "seed",
    "dropout_embed",
    "dropout_other",
    "emb_dim",
    "mean_seq_len",
    "grad_clip",
    "min_freq",
    "train_fraction",
    "proj_dim",
    "stats_scope",
    "train_corpus",
    "eyetrack_corpus",
    "fp_model",
    "embeddings",
];

/// Parses a config file into raw key-value pairs (sorted by key).
pub fn read_raw_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!(
                "{}:{}: expected 'key = value', got '{line}'",
                path.display(),
                idx + 1
            )));
        };
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::config(format!("unknown config key '{key}'")));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::config(format!("duplicate config key '{key}'")));
        }
    }
    Ok(map)
}

pub fn parse_config(path: &Path) -> Result<(TrainConfig, BTreeMap<String, String>)> {
    let raw = read_raw_config(path)?;
    let cfg = TrainConfig::from_raw(&raw)?;
    Ok((cfg, raw))
}

fn parse_num<V: std::str::FromStr>(raw: &BTreeMap<String, String>, key: &str) -> Result<Option<V>> {
    match raw.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<V>()
            .map(Some)
            .map_err(|_| Error::config(format!("invalid value '{v}' for key '{key}'"))),
    }
}

fn require<'a>(raw: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    raw.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::config(format!("missing required key '{key}'")))
}

impl TrainConfig {
    pub fn from_raw(raw: &BTreeMap<String, String>) -> Result<Self> {
        let task = Task::parse(require(raw, "task")?)?;
        let variant = Variant::parse(require(raw, "variant")?)?;
        let gate_source = match raw.get("gate_source") {
            Some(v) => GateSource::parse(v)?,
            None => GateSource::None,
        };
        let multi_task = match raw.get("multi_task").map(String::as_str) {
            None => false,
            Some("true") => true,
            Some("false") => false,
            Some(other) => {
                return Err(Error::config(format!(
                    "multi_task must be true or false, got '{other}'"
                )))
            }
        };
        let cfg = TrainConfig {
            task,
            variant,
            k_components: parse_num(raw, "k_components")?.unwrap_or(1),
            n_layers: parse_num(raw, "n_layers")?.unwrap_or(1),
            hidden_dim: parse_num(raw, "hidden_dim")?,
            param_budget: parse_num(raw, "param_budget")?,
            gate_source,
            multi_task,
            lambda: parse_num(raw, "lambda")?.unwrap_or(match task {
                Task::Lm => 0.3,
                Task::Sentiment => 0.001,
            }),
            steepness: parse_num(raw, "s")?.unwrap_or(4.0),
            epsilon: parse_num(raw, "epsilon")?.unwrap_or(0.1),
            lr: parse_num(raw, "lr")?.unwrap_or(0.001),
            batch_size: parse_num(raw, "batch_size")?.unwrap_or(match task {
                Task::Lm => 64,
                Task::Sentiment => 32,
            }),
            epochs: parse_num(raw, "epochs")?.unwrap_or(match task {
                Task::Lm => 50,
                Task::Sentiment => 30,
            }),
            seed: parse_num(raw, "seed")?.unwrap_or(0),
            dropout_embed: parse_num(raw, "dropout_embed")?.unwrap_or(0.5),
            dropout_other: parse_num(raw, "dropout_other")?.unwrap_or(0.25),
            emb_dim: parse_num(raw, "emb_dim")?.unwrap_or(64),
            mean_seq_len: parse_num(raw, "mean_seq_len")?.unwrap_or(100),
            grad_clip: parse_num(raw, "grad_clip")?.unwrap_or(5.0),
            min_freq: parse_num(raw, "min_freq")?.unwrap_or(2),
            train_fraction: parse_num(raw, "train_fraction")?.unwrap_or(match task {
                Task::Lm => 0.75,
                Task::Sentiment => 0.8,
            }),
            proj_dim: parse_num(raw, "proj_dim")?,
            stats_scope: match raw.get("stats_scope").map(String::as_str) {
                None | Some("batch") => StatsScope::Batch,
                Some("running") => StatsScope::Running,
                Some(other) => {
                    return Err(Error::config(format!("unknown stats_scope '{other}'")))
                }
            },
            train_corpus: PathBuf::from(require(raw, "train_corpus")?),
            eyetrack_corpus: raw.get("eyetrack_corpus").map(PathBuf::from),
            fp_model: raw.get("fp_model").map(PathBuf::from),
            embeddings: raw.get("embeddings").map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim.is_none() && self.param_budget.is_none() {
            return Err(Error::config("either hidden_dim or param_budget is required"));
        }
        if self.hidden_dim.is_some() && self.param_budget.is_some() {
            return Err(Error::config("hidden_dim and param_budget are mutually exclusive"));
        }
        if self.variant.is_gated() && self.gate_source == GateSource::None {
            return Err(Error::config(format!(
                "variant '{}' needs a gate_source",
                self.variant.name()
            )));
        }
        if !self.variant.is_gated() && self.gate_source != GateSource::None {
            return Err(Error::config(format!(
                "variant '{}' does not take gates; drop gate_source",
                self.variant.name()
            )));
        }
        if self.gate_source == GateSource::FixedFp && self.fp_model.is_none() {
            return Err(Error::config("gate_source fixed_fp needs fp_model = <checkpoint>"));
        }
        if self.multi_task {
            if self.gate_source != GateSource::Adaptive {
                return Err(Error::config("multi_task requires gate_source = adaptive"));
            }
            if self.task == Task::Lm && self.eyetrack_corpus.is_none() {
                return Err(Error::config("multi_task lm runs need eyetrack_corpus"));
            }
        }
        if self.gate_source == GateSource::Artificial(ArtificialKind::Freq)
            && self.eyetrack_corpus.is_none()
        {
            return Err(Error::config(
                "gate_source freq needs eyetrack_corpus for the frequency table",
            ));
        }
        if self.lambda < 0.0 {
            return Err(Error::config("lambda must be nonnegative"));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be positive"));
        }
        for (name, rate) in [
            ("dropout_embed", self.dropout_embed),
            ("dropout_other", self.dropout_other),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::config(format!("{name} must be in [0,1), got {rate}")));
            }
        }
        if !(0.0..1.0).contains(&self.train_fraction) || self.train_fraction == 0.0 {
            return Err(Error::config("train_fraction must be in (0,1)"));
        }
        Ok(())
    }

    /// Resolves the trunk spec, fitting the hidden dimension to the budget
    /// when one is given.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec {
            variant: self.variant,
            components: self.k_components,
            layers: self.n_layers,
            hidden: self.hidden_dim.unwrap_or(1),
            emb_dim: self.emb_dim,
            proj_dim: self.proj_dim,
            steepness: self.steepness,
            inter_dropout: self.dropout_other,
        };
        if let Some(budget) = self.param_budget {
            spec.hidden = fit_hidden_dim(&spec, self.task, budget)?;
        }
        spec.validate()?;
        Ok(spec)
    }
}
