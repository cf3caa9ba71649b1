//! Fixation-guided recurrent networks.
//!
//! Recurrent language and classification models whose per-token computation
//! is modulated by eye-fixation durations — human-recorded, predicted by a
//! frozen regressor, or learned end-to-end through differentiable soft
//! gates — plus the autodiff engine, eye-tracking preprocessing pipeline and
//! task harnesses needed to train and ablate them on a single machine.
//!
//! Module map:
//! - [`graph`] — tape-based reverse-mode autodiff over dense tensors
//! - [`cells`] — baseline RNN/LSTM cells and sequence unrolling
//! - [`gated`] — fixation-gated variants (parallel components and gated
//!   layers, hard and soft forms)
//! - [`fixation`] — fixed and adaptive fixation-duration predictors,
//!   duration normalization, variance-weighted losses
//! - [`data`] — eye-tracking corpus interchange, aggregation, quantile
//!   discretization, token alignment, synthetic fixtures
//! - [`tasks`] — language-modeling and sentiment harnesses, batching,
//!   artificial gate schedules, parameter budgeting, training loops

pub mod cells;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod fixation;
pub mod gated;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod rng;
pub mod schedule;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::ParamStore;
pub use rng::RngPool;
pub use tensor::{Real, Tensor};
