//! Experiment configuration, persistence, and the command runners behind
//! the `linchain` CLI.

pub mod checkpoint;
pub mod config;
pub mod runner;
pub mod trace;

pub use checkpoint::{checkpoint_load, checkpoint_save};
pub use config::ExperimentConfig;
