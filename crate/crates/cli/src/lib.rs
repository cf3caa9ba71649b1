//! Library surface of the experiment CLI, kept separate from the binary so
//! integration tests drive the exact code the commands run.

pub mod experiment;
pub mod heatmap;
pub mod matrix;
pub mod report;
