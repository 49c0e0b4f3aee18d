//! Dynamic heterogeneous network embedding with hierarchical attention and a
//! temporally attentive recurrent encoder.
//!
//! The pipeline: load a sequence of typed graph snapshots, run node-level and
//! edge-level attention within each snapshot, feed the per-snapshot summaries
//! through a recurrent encoder with temporal self-attention, and train the
//! final embeddings with a skip-gram objective over random-walk co-occurrences
//! and negative sampling. Link prediction on the held-out next snapshot is the
//! evaluation task.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod params;
pub mod rng;
pub mod synth;
pub mod temporal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
