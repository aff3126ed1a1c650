//! Session-personalized search ranking.
//!
//! Item embeddings are learned from click sessions with a hierarchical-softmax
//! skip-gram, turned into context features for each search candidate, and fed
//! to a LambdaMART ranker evaluated by mean reciprocal rank.

pub mod catalog;
pub mod corpus;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod eval;
pub mod features;
pub mod lambdamart;
pub mod pipeline;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
