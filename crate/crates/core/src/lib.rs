pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod matching;
pub mod model;
pub mod sampler;
pub mod synthetic;

pub use error::{Error, Result};
