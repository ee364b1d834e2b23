//! Retrieval benchmarking of trained encoders on the held-out classes:
//! exact FLOPs, wall-clock, recall with and without dense re-ranking, and
//! the sparsity statistics of the embeddings.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::metrics::{ActivationBatch, SparsityReport};
use crate::sparse::{rerank, DenseMatrix, InvertedIndex, SparseVec, DEFAULT_THRESHOLD, DEFAULT_TOP_K};
use crate::trainer::{train, EncoderModel, RegularizerKind, RunConfig, Split, SyntheticDataset, TrainingLog};

/// Query-time settings shared by all benchmark rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchParams {
    pub threshold: f32,
    pub top_k: usize,
    /// Timing passes over the query set; the median is reported.
    pub timing_passes: usize,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, top_k: DEFAULT_TOP_K, timing_passes: 3 }
    }
}

/// One line of the trade-off report.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    /// `FLOPS`, `L1`, `NONE` or `DENSE` for the exhaustive baseline.
    pub kind: String,
    pub lambda: f64,
    pub p_mean: f64,
    pub r_sub: Option<f64>,
    pub num_queries: usize,
    pub db_rows: usize,
    /// Sum of per-query multiply-accumulates.
    pub flops_total: u64,
    /// `flops_total / (num_queries · db_rows)`.
    pub flops_per_row: f64,
    /// Dense embedding width divided by `flops_per_row`.
    pub flops_speedup: f64,
    pub wall_clock_per_query_us: f64,
    /// Top-1 after dense re-ranking of the shortlist.
    pub recall_at_1: f64,
    /// Top-1 of the sparse scores alone.
    pub recall_at_1_sparse: f64,
    /// Any shortlist entry shares the query's class.
    pub recall_at_k: f64,
    pub rerank_k: usize,
    pub threshold: f32,
}

pub const BENCH_CSV_HEADER: &str = "kind,lambda,p_mean,r_sub,num_queries,db_rows,flops_total,\
    flops_per_row,flops_speedup,wall_clock_per_query_us,recall_at_1,recall_at_1_sparse,\
    recall_at_k,rerank_k,threshold";

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:.3},{},{},{},{},{}",
            self.kind,
            self.lambda,
            self.p_mean,
            self.r_sub.unwrap_or(f64::NAN),
            self.num_queries,
            self.db_rows,
            self.flops_total,
            self.flops_per_row,
            self.flops_speedup,
            self.wall_clock_per_query_us,
            self.recall_at_1,
            self.recall_at_1_sparse,
            self.recall_at_k,
            self.rerank_k,
            self.threshold
        )
    }
}

/// Rows sorted by kind, then by descending re-ranked recall.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn new(mut rows: Vec<BenchRow>) -> Self {
        rows.sort_by(|a, b| {
            a.kind
                .cmp(&b.kind)
                .then(b.recall_at_1.total_cmp(&a.recall_at_1))
                .then(a.lambda.total_cmp(&b.lambda))
        });
        Self { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{BENCH_CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    /// Fixed-width human-readable summary.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<6} {:>8} {:>7} {:>7} {:>10} {:>9} {:>9} {:>8} {:>8} {:>8}\n",
            "kind", "lambda", "p_mean", "r_sub", "F/row", "speedup", "us/query", "R@1", "R@1 nr", "R@k"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<6} {:>8.3} {:>7.4} {:>7.3} {:>10.4} {:>9.1} {:>9.1} {:>8.4} {:>8.4} {:>8.4}",
                r.kind,
                r.lambda,
                r.p_mean,
                r.r_sub.unwrap_or(f64::NAN),
                r.flops_per_row,
                r.flops_speedup,
                r.wall_clock_per_query_us,
                r.recall_at_1,
                r.recall_at_1_sparse,
                r.recall_at_k
            );
        }
        out
    }
}

/// `f32` copy of `f64` embeddings.
pub fn to_dense_matrix(embeddings: &Array2<f64>) -> Result<DenseMatrix> {
    DenseMatrix::new(
        embeddings.nrows(),
        embeddings.ncols(),
        embeddings.iter().map(|&v| v as f32).collect(),
    )
}

/// Embeds a split with `model` and returns `f32` embeddings.
pub fn embed_split(model: &EncoderModel, split: &Split) -> Result<DenseMatrix> {
    to_dense_matrix(&model.embed(split.inputs.view())?)
}

/// Retrieval problem built from the held-out classes of a dataset.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub queries: Split,
    pub database: Split,
}

impl EvalSet {
    pub fn from_dataset(dataset: &SyntheticDataset) -> Self {
        let (queries, database) = dataset.eval_queries_and_database();
        Self { queries, database }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Sparsity statistics of query and database embeddings together.
fn sparsity_of(queries: &DenseMatrix, database: &DenseMatrix) -> Result<SparsityReport> {
    let n = queries.rows() + database.rows();
    let values: Vec<f32> = queries.values().iter().chain(database.values()).copied().collect();
    Ok(SparsityReport::from_batch(&ActivationBatch::from_f32(n, queries.cols(), &values)?))
}

/// Per-query outcome of the sparse pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRun {
    pub flops: Vec<u64>,
    pub hit_sparse: Vec<bool>,
    pub hit_rerank: Vec<bool>,
    pub hit_any: Vec<bool>,
}

/// Runs every query through index → threshold/top-k → dense re-rank.
pub fn run_sparse_queries(
    index: &InvertedIndex,
    queries: &[SparseVec],
    dense_db: &DenseMatrix,
    dense_queries: &DenseMatrix,
    query_labels: &[usize],
    db_labels: &[usize],
    params: &BenchParams,
) -> Result<SparseRun> {
    let mut run = SparseRun { flops: vec![], hit_sparse: vec![], hit_rerank: vec![], hit_any: vec![] };
    for (qi, q) in queries.iter().enumerate() {
        let result = index.query(q, params.threshold, params.top_k)?;
        let label = query_labels[qi];
        let hit = |row: u32| db_labels[row as usize] == label;
        let ids: Vec<u32> = result.candidates.iter().map(|c| c.0).collect();
        let reranked = rerank(&ids, dense_db, dense_queries.row(qi), 1)?;
        run.flops.push(result.flops_used);
        run.hit_sparse.push(ids.first().is_some_and(|&r| hit(r)));
        run.hit_rerank.push(reranked.first().is_some_and(|&(r, _)| hit(r)));
        run.hit_any.push(ids.iter().any(|&r| hit(r)));
    }
    Ok(run)
}

fn rate(hits: &[bool]) -> f64 {
    if hits.is_empty() {
        return 0.0;
    }
    hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
}

/// Benchmarks a sparse encoder, re-ranking with `dense_model` embeddings.
pub fn bench_sparse(
    kind: &str,
    lambda: f64,
    sparse_model: &EncoderModel,
    dense_model: &EncoderModel,
    eval: &EvalSet,
    params: &BenchParams,
) -> Result<BenchRow> {
    let sparse_q = embed_split(sparse_model, &eval.queries)?;
    let sparse_db = embed_split(sparse_model, &eval.database)?;
    let dense_q = embed_split(dense_model, &eval.queries)?;
    let dense_db = embed_split(dense_model, &eval.database)?;
    let report = sparsity_of(&sparse_q, &sparse_db)?;

    let index = InvertedIndex::build(&sparse_db.to_sparse_rows()?, sparse_db.cols())?;
    let queries = sparse_q.to_sparse_rows()?;
    let run = run_sparse_queries(
        &index,
        &queries,
        &dense_db,
        &dense_q,
        &eval.queries.labels,
        &eval.database.labels,
        params,
    )?;

    let mut timings = Vec::with_capacity(params.timing_passes);
    for _ in 0..params.timing_passes.max(1) {
        let start = Instant::now();
        let mut scores = Vec::new();
        for (qi, q) in queries.iter().enumerate() {
            index.spmv_into(q, &mut scores)?;
            let shortlist = crate::sparse::threshold_topk(&scores, params.threshold, params.top_k);
            let ids: Vec<u32> = shortlist.iter().map(|c| c.0).collect();
            std::hint::black_box(rerank(&ids, &dense_db, dense_q.row(qi), 1)?);
        }
        timings.push(start.elapsed().as_secs_f64() * 1e6 / queries.len().max(1) as f64);
    }

    let flops_total: u64 = run.flops.iter().sum();
    let pairs = (queries.len() * index.num_rows()).max(1) as f64;
    let flops_per_row = flops_total as f64 / pairs;
    Ok(BenchRow {
        kind: kind.to_string(),
        lambda,
        p_mean: report.p_mean,
        r_sub: report.r_sub,
        num_queries: queries.len(),
        db_rows: index.num_rows(),
        flops_total,
        flops_per_row,
        flops_speedup: dense_db.cols() as f64 / flops_per_row,
        wall_clock_per_query_us: median(timings),
        recall_at_1: rate(&run.hit_rerank),
        recall_at_1_sparse: rate(&run.hit_sparse),
        recall_at_k: rate(&run.hit_any),
        rerank_k: params.top_k,
        threshold: params.threshold,
    })
}

/// Exhaustive dense search: every query is scored against every row.
pub fn bench_dense(dense_model: &EncoderModel, eval: &EvalSet, params: &BenchParams) -> Result<BenchRow> {
    let dense_q = embed_split(dense_model, &eval.queries)?;
    let dense_db = embed_split(dense_model, &eval.database)?;
    let report = sparsity_of(&dense_q, &dense_db)?;
    let top1 = |qi: usize| -> Result<Option<u32>> {
        let scores = dense_db.matvec(dense_q.row(qi))?;
        Ok(crate::sparse::threshold_topk(&scores, f32::NEG_INFINITY, 1).first().map(|c| c.0))
    };
    let mut hits = Vec::with_capacity(dense_q.rows());
    for qi in 0..dense_q.rows() {
        hits.push(top1(qi)?.is_some_and(|r| eval.database.labels[r as usize] == eval.queries.labels[qi]));
    }
    let mut timings = Vec::new();
    for _ in 0..params.timing_passes.max(1) {
        let start = Instant::now();
        for qi in 0..dense_q.rows() {
            std::hint::black_box(top1(qi)?);
        }
        timings.push(start.elapsed().as_secs_f64() * 1e6 / dense_q.rows().max(1) as f64);
    }
    let d = dense_db.cols();
    let recall = rate(&hits);
    Ok(BenchRow {
        kind: "DENSE".into(),
        lambda: 0.0,
        p_mean: report.p_mean,
        r_sub: report.r_sub,
        num_queries: dense_q.rows(),
        db_rows: dense_db.rows(),
        flops_total: (d * dense_q.rows() * dense_db.rows()) as u64,
        flops_per_row: d as f64,
        flops_speedup: 1.0,
        wall_clock_per_query_us: median(timings),
        recall_at_1: recall,
        recall_at_1_sparse: recall,
        recall_at_k: recall,
        rerank_k: 1,
        threshold: f32::NEG_INFINITY,
    })
}

/// Result of searching λ for a target mean activation probability.
#[derive(Debug, Clone)]
pub struct Calibrated {
    pub lambda: f64,
    pub p_mean: f64,
    pub model: EncoderModel,
    pub log: TrainingLog,
    /// Every `(λ, p̄)` tried, in order.
    pub probes: Vec<(f64, f64)>,
}

/// Searches λ (geometric bracketing, then bisection in log λ) until the
/// held-out mean activation probability is within `rel_tol` of `target`,
/// or `max_runs` trainings have been spent. Returns the closest run.
pub fn calibrate_lambda(
    base: &RunConfig,
    dataset: &SyntheticDataset,
    target: f64,
    initial_lambda: f64,
    rel_tol: f64,
    max_runs: usize,
) -> Result<Calibrated> {
    if base.regularizer == RegularizerKind::None {
        return Err(Error::Config("cannot calibrate λ without a regularizer".into()));
    }
    if !(target > 0.0 && target < 1.0) || !(initial_lambda > 0.0) {
        return Err(Error::Config("need 0 < target < 1 and a positive initial λ".into()));
    }
    let mut best: Option<Calibrated> = None;
    let mut probes = Vec::new();
    // (λ, p̄) with p̄ above / below the target.
    let mut low: Option<f64> = None;
    let mut high: Option<f64> = None;
    let mut lambda = initial_lambda;
    for _ in 0..max_runs.max(1) {
        let cfg = RunConfig { lambda_max: lambda, ..base.clone() };
        let (model, log) = train(&cfg, dataset)?;
        let p = log.last().map(|r| r.eval.p_mean).unwrap_or(f64::NAN);
        probes.push((lambda, p));
        let err = (p / target - 1.0).abs();
        if best.as_ref().is_none_or(|b| err < (b.p_mean / target - 1.0).abs()) {
            best = Some(Calibrated { lambda, p_mean: p, model, log, probes: Vec::new() });
        }
        if err <= rel_tol {
            break;
        }
        if p > target {
            low = Some(lambda);
        } else {
            high = Some(lambda);
        }
        lambda = match (low, high) {
            (Some(l), Some(h)) => (l * h).sqrt(),
            (Some(l), None) => l * 4.0,
            (None, Some(h)) => h / 4.0,
            (None, None) => unreachable!(),
        };
    }
    let mut best = best.expect("at least one run");
    best.probes = probes;
    Ok(best)
}
