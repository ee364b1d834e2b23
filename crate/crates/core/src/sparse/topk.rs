use std::cmp::Ordering;

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Default confidence threshold applied to normalized sparse scores.
pub const DEFAULT_THRESHOLD: f32 = 0.25;
/// Default shortlist size.
pub const DEFAULT_TOP_K: usize = 1000;

/// Descending score, then ascending row id.
fn rank_order(a: &(u32, f32), b: &(u32, f32)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Selects the `k` best `(row, score)` pairs in rank order. Uses partial
/// selection, so the cost is O(len + k log k).
fn select_top(mut hits: Vec<(u32, f32)>, k: usize) -> Vec<(u32, f32)> {
    if k == 0 {
        return Vec::new();
    }
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, rank_order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(rank_order);
    hits
}

/// Keeps rows with `score >= threshold` and returns the `k` highest, ties
/// broken by smaller row id. NaN scores never survive.
pub fn threshold_topk(scores: &[f32], threshold: f32, k: usize) -> Vec<(u32, f32)> {
    let hits = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= threshold)
        .map(|(i, &s)| (i as u32, s))
        .collect();
    select_top(hits, k)
}

/// Rescores `candidates` against dense embeddings and keeps the best
/// `final_k`.
pub fn rerank(
    candidates: &[u32],
    dense_db: &DenseMatrix,
    dense_query: &[f32],
    final_k: usize,
) -> Result<Vec<(u32, f32)>> {
    if dense_query.len() != dense_db.cols() {
        return Err(Error::dim(dense_db.cols(), dense_query.len()));
    }
    let scored = candidates
        .iter()
        .map(|&r| {
            if r as usize >= dense_db.rows() {
                Err(Error::RowOutOfRange { row: r as usize, rows: dense_db.rows() })
            } else {
                Ok((r, dense_db.dot_row(r as usize, dense_query)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(select_top(scored, final_k))
}
