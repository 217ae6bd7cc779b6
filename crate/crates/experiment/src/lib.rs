//! Experiment harness for the distributed-learning simulator: dataset
//! ingestion (IDX files or synthetic blobs), uniform IID partitioning,
//! transfer-learning pretraining, sweep execution, and CSV/JSON reporting.
//!
//! The runnable surface is the `fstl` binary (see `cli`). Every run is
//! seeded; rerunning a sweep from its manifest reproduces the CSV outputs
//! byte for byte.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod partition;
pub mod pretrain;
pub mod report;
pub mod runner;

pub use error::{Error, Result};
