use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sparse_embed::trainer::{DatasetConfig, OutputActivation, RegularizerKind, RunConfig};

use crate::CliError;

/// TOML config: a `[run]` table of training knobs and a `[dataset]` table.
/// Both are optional; missing keys take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub run: RunConfig,
    pub dataset: DatasetConfig,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Flags that override `[run]` and `[dataset]` keys.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub anneal_t: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// FLOPS, L1 or NONE.
    #[arg(long)]
    pub regularizer: Option<RegularizerKind>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// relu, sthresh or identity.
    #[arg(long)]
    pub output_activation: Option<OutputActivation>,
    #[arg(long)]
    pub normalize_output: Option<bool>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub eval_classes: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
}

macro_rules! apply {
    ($src:expr, $dst:expr, $($field:ident),*) => {
        $(if let Some(v) = $src.$field { $dst.$field = v; })*
    };
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ConfigFile) {
        apply!(
            self,
            cfg.run,
            lambda_max,
            anneal_t,
            steps,
            lr,
            momentum,
            margin,
            batch_size,
            samples_per_class,
            seed,
            regularizer,
            hidden_dim,
            embed_dim,
            output_activation,
            normalize_output,
            eval_interval
        );
        apply!(self, cfg.dataset, num_classes, per_class, input_dim, noise, eval_classes);
        if let Some(s) = self.data_seed {
            cfg.dataset.seed = s;
        }
    }
}

/// One trained model listed in a sweep manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub kind: String,
    pub lambda: f64,
    /// Relative to the manifest's directory.
    pub checkpoint: String,
    pub log: String,
    pub p_mean: f64,
    pub r_sub: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: DatasetConfig,
    pub run: RunConfig,
    pub dense: ManifestEntry,
    pub runs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::format(format!("invalid manifest {}: {e}", path.display())))
    }
}

/// `path` if absolute, else joined onto `base`.
pub fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
