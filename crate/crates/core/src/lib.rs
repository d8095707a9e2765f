pub mod batcher;
pub mod cli;
pub mod codec;
pub mod config;
pub mod corpus;
pub mod descriptor;
pub mod error;
pub mod filterbank;
pub mod hardloop;
pub mod pipeline;
pub mod retrieval;
pub mod surrogate;
pub mod synthetic;

pub use error::{Error, Result};
