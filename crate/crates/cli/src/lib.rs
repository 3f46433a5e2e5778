//! The `selae` pipeline: synthetic data, training, detection, evaluation,
//! benchmarking and the annotation review service.

pub mod commands;
pub mod config;
pub mod output;
pub mod serve;
