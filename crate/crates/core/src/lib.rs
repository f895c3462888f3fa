//! Inductive knowledge-graph embedding by neighborhood aggregation.
//!
//! Entities are embedded from their neighbors: each neighbor's input
//! embedding is projected by a relation-specific transform and the
//! aggregator (mean pooling, an LSTM, or logic/neural attention) combines
//! them. Because only neighbors are consulted, entities that never appeared
//! in training can be embedded from the facts that link them to known ones.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod diff;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod kg;
pub mod rng;
pub mod rules;
pub mod synthetic;
pub mod trainer;

pub use error::{DiffError, Error, KgError, Result};
