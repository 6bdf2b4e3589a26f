//! Deterministic dense linear algebra and seeded initialization.

mod matrix;
mod rng;

pub use matrix::{kaiming_bound, product, Matrix};
pub use rng::{combine_seeds, RngState};
