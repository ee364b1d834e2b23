//! Sparse vectors, the inverted index and its query path, and dense
//! re-ranking.

mod index;
mod topk;
mod vector;

pub use index::{DenseMatrix, InvertedIndex, QueryResult};
pub use topk::{rerank, threshold_topk, DEFAULT_THRESHOLD, DEFAULT_TOP_K};
pub use vector::SparseVec;
