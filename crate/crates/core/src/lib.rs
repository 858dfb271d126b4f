//! Literacy tracing: a dual-channel knowledge tracing model with LSTM and
//! transformer scoring heads, built on a small reverse-mode autodiff core.
//!
//! * [`autodiff`]: tensors, the tape and gradient checking
//! * [`layers`]: embeddings, linear maps, LSTM, causal attention
//! * [`model`]: the three-channel model, ablation variants, DKT
//! * [`data`]: canonical CSV, ASSIST09, synthetic data, splits, batches
//! * [`train`]: loss, Adam, metrics, early stopping, ablation suite

pub mod autodiff;
pub mod data;
pub mod layers;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod train;
