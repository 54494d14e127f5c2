pub mod channel_markov;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod gen_models;
pub mod metrics;
pub mod nn_core;
pub mod rng;

pub use error::{Error, Result};
