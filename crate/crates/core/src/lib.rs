//! Query group fairness auditing for retrieval-augmented generation.
//!
//! The crate builds group-labeled query sets from a corpus, runs a generator
//! with and without retrieved context, and measures how accuracy, accuracy
//! gains, document utility, exposure and attribution are distributed across
//! fairness groups.

pub mod analysis;
pub mod attribution;
pub mod corpus;
pub mod error;
pub mod fsutil;
pub mod generation;
pub mod http;
pub mod metrics;
pub mod pipeline;
pub mod retrieval;
pub mod synth;
pub mod tokenize;

pub use error::{Error, Result};
