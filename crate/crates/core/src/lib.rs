//! Adaptive sequential model generation for incrementally updated
//! click-through-rate models.
//!
//! A base Embedding&MLP model is updated period by period on fresh data.
//! A grouped GRU meta generator reads the most recent window of model
//! snapshots and emits the model that actually serves the next period.

pub mod data;
pub mod error;
pub mod grad;
pub mod meta;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
