use crate::error::{Error, Result};

/// A sparse vector of dimension `dim` stored as parallel, strictly
/// increasing index and non-zero value arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl SparseVec {
    /// Builds a vector from parallel index/value arrays, validating every
    /// invariant: indices strictly increasing and `< dim`, values finite and
    /// non-zero.
    pub fn new(dim: usize, indices: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidVector("dimension must be positive".into()));
        }
        if indices.len() != values.len() {
            return Err(Error::InvalidVector(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if u32::try_from(dim - 1).is_err() {
            return Err(Error::InvalidVector(format!("dimension {dim} exceeds u32 range")));
        }
        for (pos, (&j, &v)) in indices.iter().zip(&values).enumerate() {
            if j as usize >= dim {
                return Err(Error::InvalidVector(format!("index {j} >= dimension {dim}")));
            }
            if pos > 0 && indices[pos - 1] >= j {
                return Err(Error::InvalidVector(format!(
                    "indices not strictly increasing at position {pos}"
                )));
            }
            if !v.is_finite() || v == 0.0 {
                return Err(Error::InvalidVector(format!("entry {j} has value {v}")));
            }
        }
        Ok(Self { dim, indices, values })
    }

    /// The all-zero vector.
    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new(), Vec::new())
    }

    /// Builds a vector from `(index, value)` pairs in any order. Zero values
    /// are dropped; duplicate indices are rejected.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (u32, f32)>) -> Result<Self> {
        let mut pairs: Vec<(u32, f32)> = pairs.into_iter().filter(|&(_, v)| v != 0.0).collect();
        pairs.sort_by_key(|&(j, _)| j);
        let (indices, values) = pairs.into_iter().unzip();
        Self::new(dim, indices, values)
    }

    /// Keeps the exact non-zeros of a dense slice.
    pub fn from_dense(dense: &[f32]) -> Result<Self> {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, &v)| (j as u32, v))
            .unzip();
        Self::new(dense.len(), indices, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f32)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, j: u32) -> f32 {
        match self.indices.binary_search(&j) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        for (j, v) in self.iter() {
            out[j as usize] = v;
        }
        out
    }

    pub fn norm(&self) -> f32 {
        self.values.iter().map(|v| v * v).sum::<f32>().sqrt()
    }

    /// Scales to unit ℓ2 norm. The zero vector is returned unchanged.
    pub fn normalized(&self) -> Self {
        let norm = self.norm();
        if norm == 0.0 {
            return self.clone();
        }
        // Division can underflow tiny entries to zero; drop those to keep the
        // non-zero invariant.
        let (indices, values) = self
            .iter()
            .map(|(j, v)| (j, v / norm))
            .filter(|&(_, v)| v != 0.0)
            .unzip();
        Self { dim: self.dim, indices, values }
    }

    /// Merge-join dot product.
    pub fn dot(&self, other: &SparseVec) -> Result<f32> {
        if self.dim != other.dim {
            return Err(Error::dim(self.dim, other.dim));
        }
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0f32;
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        Ok(acc)
    }
}
