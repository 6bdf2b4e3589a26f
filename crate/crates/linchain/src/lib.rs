//! Chained linear adapters for parameter-efficient fine-tuning.
//!
//! The crate builds and trains three adapter parametrizations of a frozen
//! linear layer — classic low-rank (`lora`), a single square mixer
//! (`moslora`), and a chain of learnable matrices between the projections
//! (`linchain`) — with hand-derived analytic gradients that are verified
//! against a finite-difference oracle, plus synthetic tasks and optimizers
//! for studying how the chain changes convergence behavior.
//!
//! Everything is `f64`, deterministic, and seeded: identical configs and
//! seeds reproduce identical results bit for bit.

pub mod adapters;
pub mod error;
pub mod experiments;
pub mod gradients;
pub mod linalg;
pub mod training;

pub use adapters::{init_adapter, param_count, AdaptedLinear, AdapterConfig, ChainInit, Method};
pub use error::{Error, Result};
pub use gradients::{
    backward_analytic, finite_difference_grad, grad_check, trace_dependencies, CheckReport,
    DependencyReport, GradientSet, LossSpec,
};
pub use linalg::{Matrix, RngState};
