//! Discriminative visual dialog: late-fusion and memory-network encoders
//! over region features, dot-product and gated candidate scoring,
//! log-softmax ensembling, and the ranking metric suite.

pub mod checks;
pub mod data;
pub mod diffcore;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod model;
pub mod predictions;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
