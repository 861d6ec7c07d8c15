//! Decoder-only transformer that mixes full causal attention at a few layers
//! with block-sparse attention everywhere else, plus the exact cost accounting
//! needed to compare span layouts at equal score budgets.
//!
//! Everything is built on a plain row-major `Tensor2D` of f32 with f64
//! accumulation in reductions, so results are bit-reproducible from a seed.

pub mod attention;
pub mod cost;
pub mod error;
pub mod model;
pub mod numerics;
pub mod plan_spec;
pub mod selfcheck;
pub mod training;

pub use error::{Error, Result};
