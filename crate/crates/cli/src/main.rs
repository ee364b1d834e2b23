mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparse_embed::Error;

use config::Overrides;

/// Exit status and message of a failed command.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn format(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Domain(_) | Error::InvalidGroups { .. } => 2,
            Error::Numerical(_) => 4,
            _ => 3,
        };
        Self { code, message: e.to_string() }
    }
}

/// Train, index, query and benchmark sparse embeddings.
#[derive(Debug, Parser)]
#[command(name = "sparse-embed", version)]
struct Cli {
    /// Directory that relative output paths are written under.
    #[arg(long, global = true, env = "SPARSE_EMBED_OUT", default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model, or a FLOPS/L1 λ sweep plus a dense baseline.
    Train {
        /// TOML file with optional [run] and [dataset] tables.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated λ values; trains FLOPS and L1 models for each.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
        /// Base name of the checkpoint and log files.
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// Embed a dataset split with a checkpoint.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_enum, default_value = "database")]
        split: commands::SplitKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an inverted index from an embeddings file.
    Index {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the postings as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run sparse queries against an index.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = sparse_embed::sparse::DEFAULT_THRESHOLD)]
        threshold: f32,
        #[arg(long, default_value_t = sparse_embed::sparse::DEFAULT_TOP_K)]
        k: usize,
        /// Dense database embeddings; enables re-ranking.
        #[arg(long, requires = "rerank_queries")]
        rerank_db: Option<PathBuf>,
        #[arg(long, requires = "rerank_db")]
        rerank_queries: Option<PathBuf>,
        /// Results kept after re-ranking.
        #[arg(long, default_value_t = 10)]
        final_k: usize,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
    },
    /// Benchmark every model of a sweep manifest.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = sparse_embed::sparse::DEFAULT_THRESHOLD)]
        threshold: f32,
        #[arg(long, default_value_t = sparse_embed::sparse::DEFAULT_TOP_K)]
        k: usize,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
    /// Gradient descent of population regularizers on rectified Gaussians.
    Trajectory {
        /// F, F_TILDE or L1; all three when omitted.
        #[arg(long)]
        regularizer: Option<sparse_embed::gaussian::PopulationRegularizer>,
        /// Initial mu1,mu2,sigma1,sigma2.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-0.25, -1.3, 1.0, 1.0])]
        init: Vec<f64>,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 1_000_000)]
        max_steps: usize,
        /// Stop once both probabilities fall below this.
        #[arg(long, default_value_t = 0.01)]
        stop_below: f64,
        /// Write every n-th step.
        #[arg(long, default_value_t = 100)]
        stride: usize,
    },
    /// Fit a rectified Gaussian to activations by KS distance.
    Ksfit {
        /// Take activations from this checkpoint on the held-out split.
        #[arg(long, conflicts_with = "synthetic")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Embedding dimension to fit; the most active one when omitted.
        #[arg(long)]
        dim: Option<usize>,
        /// Sample mu,sigma,n instead of reading a checkpoint; seeded by --seed.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        synthetic: Option<Vec<f64>>,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long, default_value = "ks_cdf.csv")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = commands::OutDir::new(cli.out_dir)?;
    match cli.command {
        Command::Train { config, overrides, sweep, name } => {
            commands::train(&out, config.as_deref(), &overrides, sweep.as_deref(), &name)
        }
        Command::Embed { checkpoint, config, overrides, split, out: file } => {
            commands::embed(&out, &checkpoint, config.as_deref(), &overrides, split, &file)
        }
        Command::Index { embeddings, out: file, csv } => commands::index(&out, &embeddings, &file, csv.as_deref()),
        Command::Query { index, queries, threshold, k, rerank_db, rerank_queries, final_k, out: file } => {
            let rerank = rerank_db.zip(rerank_queries);
            commands::query(&out, &index, &queries, threshold, k, rerank, final_k, &file)
        }
        Command::Bench { manifest, threshold, k, out: file } => commands::bench(&out, &manifest, threshold, k, &file),
        Command::Trajectory { regularizer, init, lr, max_steps, stop_below, stride } => {
            if init.len() != 4 {
                return Err(CliError::usage("--init takes mu1,mu2,sigma1,sigma2"));
            }
            commands::trajectory(&out, regularizer, &init, lr, max_steps, stop_below, stride)
        }
        Command::Ksfit { checkpoint, config, overrides, dim, synthetic, points, out: file } => {
            let source = match (checkpoint, synthetic) {
                (Some(c), _) => commands::KsSource::Checkpoint { path: c, dim },
                (None, Some(s)) if s.len() != 3 => return Err(CliError::usage("--synthetic takes mu,sigma,n")),
                (None, Some(s)) => commands::KsSource::Synthetic { mu: s[0], sigma: s[1], n: s[2], seed: overrides.seed.unwrap_or(0) },
                (None, None) => return Err(CliError::usage("ksfit needs --checkpoint or --synthetic")),
            };
            commands::ksfit(&out, source, config.as_deref(), &overrides, points, &file)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
