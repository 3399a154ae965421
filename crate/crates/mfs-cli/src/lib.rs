//! Experiment harness behind the `mfs` binary: dataset generation,
//! training arms, evaluation with geometric and dosimetric metrics,
//! the four-way architecture/loss ablation, the missing-modality study,
//! dose comparison, and the loss-weight grid search.
//!
//! Everything is exposed as a library so test suites can drive
//! individual arms directly; the binary is a thin argument-parsing
//! layer. All report files are deterministic functions of (args, seeds).

pub mod config;
pub mod data;
pub mod error;
pub mod evalrun;
pub mod experiments;
pub mod report;
pub mod trainrun;

pub use config::ExperimentSpec;
pub use error::CliError;
