//! Task harnesses: language modeling and sentiment classification.
//!
//! Everything a single experiment needs sits behind [`config::TrainConfig`]:
//! corpus loading, vocabulary, gate-schedule construction, batching,
//! training loops, and per-epoch metrics.

pub mod batching;
pub mod budget;
pub mod config;
pub mod fixations;
pub mod heads;
pub mod lm;
pub mod metrics;
pub mod sentiment;

pub use batching::{make_batches, sample_segment_len, BatchPlan};
pub use budget::{fit_hidden_dim, non_embedding_param_count, Task};
pub use config::{parse_config, GateSource, StatsScope, TrainConfig};
pub use fixations::{artificial_fixations, ArtificialKind};
pub use heads::{accuracy, perplexity, LmHead, SentimentHead};
pub use metrics::EpochMetrics;
