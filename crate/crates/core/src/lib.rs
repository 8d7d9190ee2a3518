pub mod backtest;
pub mod cli;
pub mod dataset;
pub mod explain;
pub mod error;
pub mod eval;
pub mod indicators;
pub mod model;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod saliency;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
