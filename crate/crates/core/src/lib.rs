//! Sparse "superword" concept learning with the nested beta process.
//!
//! Documents are bags of words; concepts are sparse sets of words shared
//! across documents. An observed semantic feature matrix ties concept
//! membership to word similarity. Inference is collapsed MCMC.

pub mod cli;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod sampler;
pub mod synthetic;

pub use error::{Error, Result};
