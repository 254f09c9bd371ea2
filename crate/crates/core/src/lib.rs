//! Sequential evolutionary transfer optimization for expensive
//! multi-objective calibration.
//!
//! Tasks arrive one after another. Every finished task leaves its evaluated
//! data and a surrogate in a [`archive::SourceArchive`]; a new task is
//! embedded, compared against the archive, and optimized with elites and
//! surrogates borrowed from its most similar predecessors.

pub mod archive;
pub mod config;
pub mod embedder;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod gp;
pub mod metrics;
pub mod moea;
pub mod optimizer;
pub mod problems;
pub mod sampling;
pub mod transfer;
pub mod types;

pub use error::{Error, Result};
