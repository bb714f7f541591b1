//! Explainable multivariate time-series anomaly detection with a
//! memory-augmented graph-convolutional recurrent autoencoder.
//!
//! The pipeline: a learned feature graph drives graph-convolutional GRU
//! cells that encode each sliding window; the final hidden state attends
//! over a small bank of memory items; a decoder reconstructs the window in
//! reverse. At inference the shift of each feature's memory attention
//! between consecutive windows is the anomaly score, and correlations of
//! those scores rank the features behind each detected anomaly.

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod interpret;
pub mod losses;
pub mod memory;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod scoring;
pub mod training;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
