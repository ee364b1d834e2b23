//! Sparsity statistics over a batch of embeddings: empirical activation
//! probabilities, the FLOPs-per-row estimate and its continuous relaxation,
//! the ℓ1 baseline, the sub-optimality ratio and the exclusive-lasso form.
//!
//! Everything accumulates in `f64`.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// An `n × d` batch of embeddings, one row per input.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBatch {
    values: Array2<f64>,
}

impl ActivationBatch {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if values.ncols() == 0 {
            return Err(Error::Domain("embedding dimension must be positive".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite activation".into()));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::dim(d, row.len()));
            }
            flat.extend_from_slice(row);
        }
        let values = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::Domain(e.to_string()))?;
        Self::new(values)
    }

    /// Widens `f32` embeddings, e.g. read back from an embeddings file.
    pub fn from_f32(n: usize, d: usize, values: &[f32]) -> Result<Self> {
        let values = Array2::from_shape_vec((n, d), values.iter().map(|&v| v as f64).collect())
            .map_err(|e| Error::Domain(e.to_string()))?;
        Self::new(values)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

/// Fraction of rows whose entry in each column is non-zero (`|a| > eps`;
/// with `eps = 0` this is the exact non-zero test).
pub fn activation_probabilities_eps(batch: &ActivationBatch, eps: f64) -> Vec<f64> {
    let n = batch.n() as f64;
    batch
        .values
        .axis_iter(Axis(1))
        .map(|col| col.iter().filter(|v| v.abs() > eps).count() as f64 / n)
        .collect()
}

/// Empirical activation probability `p̄_j` of every dimension.
pub fn activation_probabilities(batch: &ActivationBatch) -> Vec<f64> {
    activation_probabilities_eps(batch, 0.0)
}

/// Mean absolute activation `ā_j` of every dimension.
pub fn mean_abs_activations(batch: &ActivationBatch) -> Vec<f64> {
    let n = batch.n() as f64;
    batch
        .values
        .axis_iter(Axis(1))
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>() / n)
        .collect()
}

/// Expected multiply-accumulates per database row, `Σ_j p̄_j²`.
pub fn flops_per_row(batch: &ActivationBatch) -> f64 {
    flops_from_probabilities(&activation_probabilities(batch))
}

pub fn flops_from_probabilities(p_bar: &[f64]) -> f64 {
    p_bar.iter().map(|p| p * p).sum()
}

/// Continuous relaxation `Σ_j ā_j²`.
pub fn relaxed_flops(batch: &ActivationBatch) -> f64 {
    mean_abs_activations(batch).iter().map(|a| a * a).sum()
}

/// `Σ_j ā_j`, the mean ℓ1 norm of a row.
pub fn l1_mean(batch: &ActivationBatch) -> f64 {
    mean_abs_activations(batch).iter().sum()
}

/// `F / (d · p̄²)` with `p̄` the mean of the per-dimension probabilities.
/// `None` when no entry is active, where the ratio is undefined.
pub fn suboptimality_ratio(batch: &ActivationBatch) -> Option<f64> {
    ratio_from_probabilities(&activation_probabilities(batch))
}

pub fn ratio_from_probabilities(p_bar: &[f64]) -> Option<f64> {
    let d = p_bar.len() as f64;
    let mean = p_bar.iter().sum::<f64>() / d;
    if mean <= 0.0 {
        return None;
    }
    Some(flops_from_probabilities(p_bar) / (d * mean * mean))
}

/// `(1/n²) Σ_{p,q} ⟨|a_p|, |a_q|⟩`. For unit-norm rows this equals
/// [`relaxed_flops`]; it is computed pairwise, in O(n² d), so it can serve as
/// an independent check of that identity.
pub fn pairwise_abs_similarity(batch: &ActivationBatch) -> f64 {
    let abs = batch.values.mapv(f64::abs);
    let n = batch.n();
    let mut total = 0.0;
    for p in 0..n {
        let rp = abs.row(p);
        for q in 0..n {
            total += rp.iter().zip(abs.row(q)).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    total / (n * n) as f64
}

/// Exclusive lasso `Σ_g (Σ_{j∈g} Σ_i |a_ij|)²` where `groups` partitions the
/// columns. With one group per column this is `n² · relaxed_flops`.
pub fn exclusive_lasso(batch: &ActivationBatch, groups: &[Vec<usize>]) -> Result<f64> {
    let d = batch.d();
    let mut seen = vec![false; d];
    for g in groups {
        for &j in g {
            if j >= d {
                return Err(Error::InvalidGroups { dim: d, reason: format!("column {j} out of range") });
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidGroups { dim: d, reason: format!("column {j} repeated") });
            }
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidGroups { dim: d, reason: format!("column {j} not covered") });
    }
    let col_l1: Vec<f64> = batch
        .values
        .axis_iter(Axis(1))
        .map(|col| col.iter().map(|v| v.abs()).sum())
        .collect();
    Ok(groups
        .iter()
        .map(|g| {
            let s: f64 = g.iter().map(|&j| col_l1[j]).sum();
            s * s
        })
        .sum())
}

/// One group per column.
pub fn column_groups(d: usize) -> Vec<Vec<usize>> {
    (0..d).map(|j| vec![j]).collect()
}

/// Number of dimensions that never fire.
pub fn dead_dimensions(p_bar: &[f64]) -> usize {
    p_bar.iter().filter(|&&p| p == 0.0).count()
}

/// Summary statistics of one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub n: usize,
    pub d: usize,
    pub p_bar: Vec<f64>,
    pub a_bar: Vec<f64>,
    pub p_mean: f64,
    pub flops_per_row: f64,
    pub relaxed_flops: f64,
    pub l1: f64,
    /// `None` for an all-zero batch.
    pub r_sub: Option<f64>,
}

impl SparsityReport {
    pub const CSV_HEADER: &'static str = "n,d,p_mean,flops_per_row,relaxed_flops,l1,r_sub";

    pub fn from_batch(batch: &ActivationBatch) -> Self {
        let p_bar = activation_probabilities(batch);
        let a_bar = mean_abs_activations(batch);
        let d = batch.d();
        Self {
            n: batch.n(),
            d,
            p_mean: p_bar.iter().sum::<f64>() / d as f64,
            flops_per_row: flops_from_probabilities(&p_bar),
            relaxed_flops: a_bar.iter().map(|a| a * a).sum(),
            l1: a_bar.iter().sum(),
            r_sub: ratio_from_probabilities(&p_bar),
            p_bar,
            a_bar,
        }
    }

    pub fn dead_dimensions(&self) -> usize {
        dead_dimensions(&self.p_bar)
    }

    /// One CSV row matching [`CSV_HEADER`](Self::CSV_HEADER); an undefined
    /// ratio is written as `NaN`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.n,
            self.d,
            self.p_mean,
            self.flops_per_row,
            self.relaxed_flops,
            self.l1,
            self.r_sub.unwrap_or(f64::NAN)
        )
    }
}
