//! Bayesian neural network posteriors sampled inside sparse substructures.
//!
//! The pieces, roughly in pipeline order:
//!
//! - [`nn`]: feed-forward classifiers over a flat parameter vector, with
//!   masked forward/backward passes and the stochastic energy gradient.
//! - [`mask`]: sparsity masks, iterative magnitude pruning (with and without
//!   rewinding) and random layer-wise / global masks.
//! - [`train`]: masked SGD, used for pruning and to initialize chains.
//! - [`sample`]: SGHMC inside a mask, and independent chains over several masks.
//! - [`metrics`]: predictive accuracy, NLL, ECE and chain diagnostics.
//! - [`sparse`]: CSR inference and the latency benchmark.
//! - [`store`]: the ensemble file format and IDX datasets.
//! - [`config`] and [`cli`]: the experiment runner.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sample;
pub mod sparse;
pub mod store;
pub mod train;

pub use error::{Error, Result};
