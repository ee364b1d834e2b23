//! Sparse high-dimensional embeddings learned under a FLOPs-minimizing
//! regularizer, and exact sparse nearest-neighbour retrieval through an
//! inverted index.
//!
//! - [`sparse`]: sparse vectors, the inverted index, thresholded top-k and
//!   dense re-ranking.
//! - [`metrics`]: activation probabilities, FLOPs-per-row, its relaxation,
//!   ℓ1, sub-optimality ratio and exclusive lasso.
//! - [`trainer`]: a small encoder trained with triplet loss plus an annealed
//!   sparsity regularizer.
//! - [`gaussian`]: rectified-Gaussian moments, regularizer trajectories and
//!   KS fitting.
//! - [`bench`]: recall / FLOPs / latency evaluation of trained encoders.
//! - [`formats`]: binary index, embedding and checkpoint files.

pub mod bench;
pub mod error;
pub mod formats;
pub mod gaussian;
pub mod metrics;
pub mod sparse;
pub mod special;
pub mod trainer;

pub use error::{Error, Result};
