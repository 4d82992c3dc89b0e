//! Experiment configuration, the prepare/pretrain/run/report pipeline, the
//! synthetic drift generator and the gradient-check suite behind the `asmg`
//! binary.

pub mod config;
pub mod gradcheck;
pub mod pipeline;
pub mod synth;
