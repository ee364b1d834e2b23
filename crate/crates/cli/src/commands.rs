use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use rand::SeedableRng;
use sparse_embed::bench::{bench_dense, bench_sparse, embed_split, BenchParams, BenchReport, EvalSet};
use sparse_embed::formats::{self, write_atomic};
use sparse_embed::gaussian::{
    cdf_table, ks_fit, run_trajectory, GaussianDim, PopulationRegularizer, TrajectoryOptions,
};
use sparse_embed::metrics::{activation_probabilities, ActivationBatch};
use sparse_embed::sparse::{rerank, InvertedIndex};
use sparse_embed::trainer::{
    train as train_model, EncoderModel, OutputActivation, RegularizerKind, RunConfig, SyntheticDataset,
    TrainingLog,
};

use crate::config::{resolve, ConfigFile, Manifest, ManifestEntry, Overrides};
use crate::CliError;

/// Root for relative output paths.
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn new(root: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&root)
            .map_err(|e| CliError::usage(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self(root))
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.0.join(p)
        }
    }
}

fn io_context(path: &Path) -> impl Fn(sparse_embed::Error) -> CliError + '_ {
    move |e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    }
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ConfigFile, CliError> {
    let mut cfg = ConfigFile::load(path)?;
    overrides.apply(&mut cfg);
    cfg.dataset.validate()?;
    cfg.run.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(io_context(path))
}

fn fit_one(
    out: &OutDir,
    run: &RunConfig,
    data: &SyntheticDataset,
    stem: &str,
    kind: String,
) -> Result<ManifestEntry, CliError> {
    let (model, log) = train_model(run, data)?;
    for w in &log.warnings {
        eprintln!("warning: {w}");
    }
    let checkpoint = format!("{stem}.spfm");
    let log_file = format!("{stem}.log.csv");
    formats::save_checkpoint(&out.path(Path::new(&checkpoint)), &model)?;
    write_text(&out.path(Path::new(&log_file)), &log.to_csv())?;
    let (p_mean, r_sub) = final_sparsity(&log);
    println!(
        "{stem}: kind={kind} lambda={} p_mean={p_mean:.4} r_sub={} -> {}",
        run.lambda_max,
        r_sub.map_or("n/a".into(), |r| format!("{r:.3}")),
        checkpoint
    );
    Ok(ManifestEntry { kind, lambda: run.lambda_max, checkpoint, log: log_file, p_mean, r_sub })
}

fn final_sparsity(log: &TrainingLog) -> (f64, Option<f64>) {
    log.last().map_or((f64::NAN, None), |r| (r.eval.p_mean, r.eval.r_sub))
}

fn lambda_tag(lambda: f64) -> String {
    format!("{lambda}").replace('.', "p")
}

pub fn train(
    out: &OutDir,
    config: Option<&Path>,
    overrides: &Overrides,
    sweep: Option<&[f64]>,
    name: &str,
) -> Result<(), CliError> {
    let cfg = load_config(config, overrides)?;
    let data = SyntheticDataset::generate(&cfg.dataset)?;
    let Some(lambdas) = sweep else {
        fit_one(out, &cfg.run, &data, name, cfg.run.regularizer.to_string())?;
        return Ok(());
    };
    if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(CliError::usage("sweep values must be finite and >= 0"));
    }
    let dense_cfg = RunConfig {
        regularizer: RegularizerKind::None,
        lambda_max: 0.0,
        output_activation: OutputActivation::Identity,
        ..cfg.run.clone()
    };
    let dense = fit_one(out, &dense_cfg, &data, &format!("{name}_dense"), "DENSE".into())?;
    let mut runs = Vec::new();
    for kind in [RegularizerKind::Flops, RegularizerKind::L1] {
        for &lambda in lambdas {
            let run = RunConfig { regularizer: kind, lambda_max: lambda, ..cfg.run.clone() };
            let stem = format!("{name}_{}_{}", kind.to_string().to_lowercase(), lambda_tag(lambda));
            runs.push(fit_one(out, &run, &data, &stem, kind.to_string())?);
        }
    }
    let manifest = Manifest { dataset: cfg.dataset, run: cfg.run, dense, runs };
    let path = out.path(Path::new(&format!("{name}_sweep.json")));
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&path, &json)?;
    println!("manifest: {}", path.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitKind {
    Train,
    /// Held-out query samples.
    Queries,
    /// Held-out database samples.
    Database,
}

fn load_model(path: &Path) -> Result<EncoderModel, CliError> {
    formats::load_checkpoint(path).map_err(io_context(path))
}

pub fn embed(
    out: &OutDir,
    checkpoint: &Path,
    config: Option<&Path>,
    overrides: &Overrides,
    split: SplitKind,
    file: &Path,
) -> Result<(), CliError> {
    let cfg = load_config(config, overrides)?;
    let model = load_model(checkpoint)?;
    let data = SyntheticDataset::generate(&cfg.dataset)?;
    let eval = EvalSet::from_dataset(&data);
    let split = match split {
        SplitKind::Train => &data.train,
        SplitKind::Queries => &eval.queries,
        SplitKind::Database => &eval.database,
    };
    let m = embed_split(&model, split)?;
    let path = out.path(file);
    formats::save_embeddings(&path, &m)?;
    println!("{} x {} embeddings -> {}", m.rows(), m.cols(), path.display());
    Ok(())
}

pub fn index(out: &OutDir, embeddings: &Path, file: &Path, csv: Option<&Path>) -> Result<(), CliError> {
    let m = formats::load_embeddings(embeddings).map_err(io_context(embeddings))?;
    let idx = InvertedIndex::build(&m.to_sparse_rows()?, m.cols())?;
    let path = out.path(file);
    formats::save_index(&path, &idx)?;
    if let Some(csv) = csv {
        write_text(&out.path(csv), &formats::index_to_csv(&idx))?;
    }
    println!("{} rows, {} columns, {} postings -> {}", idx.num_rows(), idx.dim(), idx.nnz(), path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn query(
    out: &OutDir,
    index: &Path,
    queries: &Path,
    threshold: f32,
    k: usize,
    rerank_with: Option<(PathBuf, PathBuf)>,
    final_k: usize,
    file: &Path,
) -> Result<(), CliError> {
    let idx = formats::load_index(index).map_err(io_context(index))?;
    let q = formats::load_embeddings(queries).map_err(io_context(queries))?;
    if q.cols() != idx.dim() {
        return Err(sparse_embed::Error::Dimension { expected: idx.dim(), actual: q.cols() }.into());
    }
    let dense = match rerank_with {
        Some((db, dq)) => {
            let db_m = formats::load_embeddings(&db).map_err(io_context(&db))?;
            let dq_m = formats::load_embeddings(&dq).map_err(io_context(&dq))?;
            if db_m.rows() != idx.num_rows() || dq_m.rows() != q.rows() || db_m.cols() != dq_m.cols() {
                return Err(CliError::format(format!(
                    "re-rank embeddings are {}x{} and {}x{}, index has {} rows and there are {} queries",
                    db_m.rows(),
                    db_m.cols(),
                    dq_m.rows(),
                    dq_m.cols(),
                    idx.num_rows(),
                    q.rows()
                )));
            }
            Some((db_m, dq_m))
        }
        None => None,
    };
    let sparse_q = q.to_sparse_rows()?;
    let mut csv = String::from("query_id,ids,scores,flops_used,elapsed_us\n");
    let mut total_flops = 0u64;
    for (i, sq) in sparse_q.iter().enumerate() {
        let start = Instant::now();
        let result = idx.query(sq, threshold, k)?;
        let hits = match &dense {
            Some((db, dq)) => {
                let ids: Vec<u32> = result.candidates.iter().map(|c| c.0).collect();
                rerank(&ids, db, dq.row(i), final_k)?
            }
            None => result.candidates.clone(),
        };
        let elapsed = start.elapsed().as_secs_f64() * 1e6;
        total_flops += result.flops_used;
        let ids: Vec<String> = hits.iter().map(|h| h.0.to_string()).collect();
        let scores: Vec<String> = hits.iter().map(|h| h.1.to_string()).collect();
        let _ = writeln!(
            csv,
            "{i},{},{},{},{elapsed:.3}",
            ids.join(";"),
            scores.join(";"),
            result.flops_used
        );
    }
    let path = out.path(file);
    write_text(&path, &csv)?;
    println!(
        "{} queries, {} FLOPs total ({:.2} per row) -> {}",
        sparse_q.len(),
        total_flops,
        total_flops as f64 / (sparse_q.len() * idx.num_rows()).max(1) as f64,
        path.display()
    );
    Ok(())
}

pub fn bench(out: &OutDir, manifest_path: &Path, threshold: f32, k: usize, file: &Path) -> Result<(), CliError> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    for entry in std::iter::once(&manifest.dense).chain(&manifest.runs) {
        let p = resolve(base, &entry.checkpoint);
        if !p.is_file() {
            return Err(CliError::format(format!(
                "checkpoint {} ({} lambda={}) listed in {} does not exist",
                p.display(),
                entry.kind,
                entry.lambda,
                manifest_path.display()
            )));
        }
    }
    let data = SyntheticDataset::generate(&manifest.dataset)?;
    let eval = EvalSet::from_dataset(&data);
    let params = BenchParams { threshold, top_k: k, ..BenchParams::default() };
    let dense = load_model(&resolve(base, &manifest.dense.checkpoint))?;
    let mut rows = vec![bench_dense(&dense, &eval, &params)?];
    for entry in &manifest.runs {
        let model = load_model(&resolve(base, &entry.checkpoint))?;
        rows.push(bench_sparse(&entry.kind, entry.lambda, &model, &dense, &eval, &params)?);
    }
    let report = BenchReport::new(rows);
    let path = out.path(file);
    write_text(&path, &report.to_csv())?;
    print!("{}", report.table());
    println!("-> {}", path.display());
    Ok(())
}

pub fn trajectory(
    out: &OutDir,
    regularizer: Option<PopulationRegularizer>,
    init: &[f64],
    lr: f64,
    max_steps: usize,
    stop_below: f64,
    stride: usize,
) -> Result<(), CliError> {
    let dims = [GaussianDim::new(init[0], init[2])?, GaussianDim::new(init[1], init[3])?];
    let opts = TrajectoryOptions { lr, max_steps, stop_below: Some(stop_below) };
    let regs = regularizer.map_or(PopulationRegularizer::ALL.to_vec(), |r| vec![r]);
    for reg in regs {
        let t = run_trajectory(&dims, reg, opts)?;
        let mut csv = format!("{}\n", sparse_embed::gaussian::Trajectory::CSV_HEADER);
        for row in t.csv_rows(stride) {
            csv.push_str(&row);
            csv.push('\n');
        }
        let path = out.path(Path::new(&format!("trajectory_{}.csv", reg.to_string().to_lowercase())));
        write_text(&path, &csv)?;
        let last = t.last();
        println!(
            "{reg}: rate ratio at start {:.4}, {} steps, final (p1,p2)=({:.5},{:.5}){} -> {}",
            t.history[0].rate_ratio,
            last.step,
            last.probabilities[0],
            last.probabilities[1],
            if t.reached_stop { "" } else { " (stop not reached)" },
            path.display()
        );
        if t.sigma_clamped {
            eprintln!("warning: {reg}: sigma was clamped at its lower bound");
        }
    }
    Ok(())
}

pub enum KsSource {
    Checkpoint { path: PathBuf, dim: Option<usize> },
    Synthetic { mu: f64, sigma: f64, n: f64, seed: u64 },
}

pub fn ksfit(
    out: &OutDir,
    source: KsSource,
    config: Option<&Path>,
    overrides: &Overrides,
    points: usize,
    file: &Path,
) -> Result<(), CliError> {
    let (samples, label) = match source {
        KsSource::Checkpoint { path, dim } => {
            let cfg = load_config(config, overrides)?;
            let model = load_model(&path)?;
            let data = SyntheticDataset::generate(&cfg.dataset)?;
            let emb = model.embed(data.eval.inputs.view())?;
            let probs = activation_probabilities(&ActivationBatch::new(emb.clone())?);
            let j = match dim {
                Some(j) if j < probs.len() => j,
                Some(j) => return Err(CliError::usage(format!("dimension {j} out of range 0..{}", probs.len()))),
                None => (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap_or(0),
            };
            (emb.column(j).to_vec(), format!("dimension {j} (p={:.4})", probs[j]))
        }
        KsSource::Synthetic { mu, sigma, n, seed } => {
            if !(n >= 1.0) || n.fract() != 0.0 {
                return Err(CliError::usage(format!("sample count {n} is not a positive integer")));
            }
            if !(sigma > 0.0) {
                return Err(CliError::usage("sigma must be positive"));
            }
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let normal = rand_distr::Normal::new(mu, sigma).map_err(|e| CliError::usage(e.to_string()))?;
            let samples = (0..n as usize)
                .map(|_| rand_distr::Distribution::sample(&normal, &mut rng).max(0.0))
                .collect();
            (samples, format!("ReLU(N({mu}, {sigma}^2)), n={n}"))
        }
    };
    let fit = ks_fit(&samples)?;
    let mut csv = String::from("x,empirical,fitted\n");
    for (x, e, f) in cdf_table(&samples, &fit, points)? {
        let _ = writeln!(csv, "{x},{e},{f}");
    }
    let path = out.path(file);
    write_text(&path, &csv)?;
    println!(
        "{label}: mu={:.4} sigma={:.4} ks={:.5}{} -> {}",
        fit.mu,
        fit.sigma,
        fit.ks_distance,
        if fit.degenerate { " (all samples zero)" } else { "" },
        path.display()
    );
    Ok(())
}
