use super::topk::threshold_topk;
use super::SparseVec;
use crate::error::{Error, Result};

/// Column-major inverted index over a sparse matrix.
///
/// Posting lists are stored contiguously: column `j` owns
/// `rows[offsets[j]..offsets[j + 1]]` and the matching `values` slice, with
/// row ids strictly increasing. The index is immutable once built, so a
/// shared reference can serve concurrent queries.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    dim: usize,
    num_rows: usize,
    offsets: Vec<usize>,
    rows: Vec<u32>,
    values: Vec<f32>,
}

/// Shortlist returned by [`InvertedIndex::query`].
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// `(row_id, score)` sorted by descending score, then ascending row id.
    pub candidates: Vec<(u32, f32)>,
    /// Number of multiply-accumulates performed, i.e. coincidences between
    /// the query support and stored non-zeros.
    pub flops_used: u64,
}

impl InvertedIndex {
    /// Indexes `rows` (row `i` of the database is `rows[i]`).
    pub fn build(rows: &[SparseVec], dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidVector("index dimension must be positive".into()));
        }
        if u32::try_from(rows.len()).is_err() {
            return Err(Error::InvalidVector(format!("{} rows exceed u32 ids", rows.len())));
        }
        let mut counts = vec![0usize; dim];
        for row in rows {
            if row.dim() != dim {
                return Err(Error::dim(dim, row.dim()));
            }
            for &j in row.indices() {
                counts[j as usize] += 1;
            }
        }
        let mut offsets = Vec::with_capacity(dim + 1);
        offsets.push(0);
        for c in &counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        let total = offsets[dim];
        let mut cursor = offsets[..dim].to_vec();
        let mut ids = vec![0u32; total];
        let mut values = vec![0f32; total];
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter() {
                let slot = &mut cursor[j as usize];
                ids[*slot] = i as u32;
                values[*slot] = v;
                *slot += 1;
            }
        }
        Ok(Self { dim, num_rows: rows.len(), offsets, rows: ids, values })
    }

    /// Reassembles an index from per-column posting lists, checking every
    /// structural invariant. Used by the binary reader.
    pub fn from_postings(
        dim: usize,
        num_rows: usize,
        postings: impl IntoIterator<Item = Vec<(u32, f32)>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidVector("index dimension must be positive".into()));
        }
        let mut offsets = vec![0];
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for (j, list) in postings.into_iter().enumerate() {
            if j >= dim {
                return Err(Error::InvalidVector(format!("more than {dim} posting lists")));
            }
            let mut prev: Option<u32> = None;
            for (r, v) in list {
                if r as usize >= num_rows {
                    return Err(Error::RowOutOfRange { row: r as usize, rows: num_rows });
                }
                if prev.is_some_and(|p| p >= r) {
                    return Err(Error::InvalidVector(format!(
                        "posting list {j} row ids not strictly increasing"
                    )));
                }
                if !v.is_finite() || v == 0.0 {
                    return Err(Error::InvalidVector(format!(
                        "posting list {j} stores value {v}"
                    )));
                }
                prev = Some(r);
                rows.push(r);
                values.push(v);
            }
            offsets.push(rows.len());
        }
        if offsets.len() != dim + 1 {
            return Err(Error::InvalidVector(format!(
                "expected {dim} posting lists, got {}",
                offsets.len() - 1
            )));
        }
        Ok(Self { dim, num_rows, offsets, rows, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    /// Row ids and values stored for column `j`.
    pub fn posting(&self, j: usize) -> (&[u32], &[f32]) {
        let range = self.offsets[j]..self.offsets[j + 1];
        (&self.rows[range.clone()], &self.values[range])
    }

    pub fn posting_len(&self, j: usize) -> usize {
        self.offsets[j + 1] - self.offsets[j]
    }

    /// Rebuilds the indexed rows.
    pub fn to_rows(&self) -> Vec<SparseVec> {
        let mut pairs: Vec<Vec<(u32, f32)>> = vec![Vec::new(); self.num_rows];
        for j in 0..self.dim {
            let (rows, values) = self.posting(j);
            for (&r, &v) in rows.iter().zip(values) {
                pairs[r as usize].push((j as u32, v));
            }
        }
        pairs
            .into_iter()
            .map(|p| {
                let (indices, values) = p.into_iter().unzip();
                SparseVec::new(self.dim, indices, values).expect("index invariants hold")
            })
            .collect()
    }

    /// ℓ2 norm of every stored row.
    pub fn row_norms(&self) -> Vec<f32> {
        let mut sq = vec![0f32; self.num_rows];
        for (&r, &v) in self.rows.iter().zip(&self.values) {
            sq[r as usize] += v * v;
        }
        sq.into_iter().map(f32::sqrt).collect()
    }

    /// Sparse matrix-vector product `D · query`.
    ///
    /// Columns are visited in ascending order, so each row's score is
    /// accumulated in ascending column order, the same order a dense
    /// row-by-row dot product would use. Returns the dense score vector and
    /// the exact multiply-accumulate count.
    pub fn spmv(&self, query: &SparseVec) -> Result<(Vec<f32>, u64)> {
        let mut scores = Vec::new();
        let flops = self.spmv_into(query, &mut scores)?;
        Ok((scores, flops))
    }

    /// Like [`spmv`](Self::spmv) but reuses a caller-owned accumulator, which
    /// is resized and zeroed.
    pub fn spmv_into(&self, query: &SparseVec, scores: &mut Vec<f32>) -> Result<u64> {
        if query.dim() != self.dim {
            return Err(Error::dim(self.dim, query.dim()));
        }
        scores.clear();
        scores.resize(self.num_rows, 0.0);
        let mut flops = 0u64;
        for (j, q) in query.iter() {
            let (rows, values) = self.posting(j as usize);
            for (&r, &v) in rows.iter().zip(values) {
                scores[r as usize] += v * q;
            }
            flops += rows.len() as u64;
        }
        Ok(flops)
    }

    /// Full sparse nearest-neighbour query: product, threshold, top-k.
    pub fn query(&self, query: &SparseVec, threshold: f32, k: usize) -> Result<QueryResult> {
        let (scores, flops_used) = self.spmv(query)?;
        Ok(QueryResult { candidates: threshold_topk(&scores, threshold, k), flops_used })
    }
}

/// Row-major dense matrix used for exhaustive search and re-ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dim(rows * cols, values.len()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVector(format!(
                "non-finite value at row {}, col {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Sparse view of every row, keeping exact non-zeros.
    pub fn to_sparse_rows(&self) -> Result<Vec<SparseVec>> {
        if self.cols == 0 {
            return Err(Error::InvalidVector("zero-width matrix".into()));
        }
        (0..self.rows).map(|i| SparseVec::from_dense(self.row(i))).collect()
    }

    /// Dot product of row `i` with `query`, accumulated in ascending column
    /// order.
    pub fn dot_row(&self, i: usize, query: &[f32]) -> f32 {
        self.row(i).iter().zip(query).fold(0.0, |acc, (a, b)| acc + a * b)
    }

    /// Exhaustive `self · query`.
    pub fn matvec(&self, query: &[f32]) -> Result<Vec<f32>> {
        if query.len() != self.cols {
            return Err(Error::dim(self.cols, query.len()));
        }
        Ok((0..self.rows).map(|i| self.dot_row(i, query)).collect())
    }
}
