//! Digital biomarker modeling and next-day glycemic control prediction.

pub mod baselines;
pub mod binning;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod importance;
pub mod model;
pub mod net;
pub mod persist;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, Result};
