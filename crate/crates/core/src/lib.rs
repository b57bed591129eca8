//! Benchmarking toolkit for optimizers on tabular MLPs.
//!
//! The crate is organised along the benchmark pipeline:
//!
//! * [`data`]: dataset loading, preprocessing and synthetic generators
//! * [`nn`]: dense tensors, layers, losses and hand-written backprop
//! * [`model`]: plain MLP, MLP with piecewise-linear embeddings, packed ensembles
//! * [`optim`]: fourteen update rules behind one stepping interface
//! * [`ema`]: exponential moving average of weights
//! * [`train`]: early-stopped training protocol and metrics
//! * [`tune`]: search spaces and a TPE-style sampler
//! * [`stats`]: score aggregation, tiered ranks, Welch win/tie/loss, reports

pub mod constants;
pub mod data;
pub mod ema;
pub mod error;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod selftest;
pub mod stats;
pub mod train;
pub mod tune;

pub use error::{Error, Result};
