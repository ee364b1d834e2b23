use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparsity penalty added to the metric loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RegularizerKind {
    /// `Σ_j ā_j²` over the batch.
    Flops,
    /// `Σ_j ā_j` over the batch.
    L1,
    None,
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Flops => "FLOPS",
            Self::L1 => "L1",
            Self::None => "NONE",
        })
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FLOPS" => Ok(Self::Flops),
            "L1" => Ok(Self::L1),
            "NONE" => Ok(Self::None),
            _ => Err(Error::Config(format!("unknown regularizer `{s}` (expected FLOPS, L1 or NONE)"))),
        }
    }
}

/// Activation applied to the embedding layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Relu,
    /// `sgn(x) · max(|x| − 1/2, 0)`.
    SThresh,
    /// No activation; used for dense baselines.
    Identity,
}

impl OutputActivation {
    pub(crate) fn code(self) -> u32 {
        match self {
            Self::Relu => 0,
            Self::SThresh => 1,
            Self::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Self::Relu),
            1 => Some(Self::SThresh),
            2 => Some(Self::Identity),
            _ => None,
        }
    }
}

impl FromStr for OutputActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "sthresh" => Ok(Self::SThresh),
            "identity" | "none" => Ok(Self::Identity),
            _ => Err(Error::Config(format!("unknown activation `{s}`"))),
        }
    }
}

/// Knobs of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lambda_max: f64,
    /// Step at which the quadratic λ ramp reaches `lambda_max`.
    pub anneal_t: usize,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub margin: f64,
    /// Embeddings per batch; `classes_per_batch × samples_per_class`.
    pub batch_size: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    pub regularizer: RegularizerKind,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub output_activation: OutputActivation,
    pub normalize_output: bool,
    /// Steps between evaluation passes over the held-out classes.
    pub eval_interval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lambda_max: 0.0,
            anneal_t: 5000,
            steps: 5000,
            lr: 0.02,
            momentum: 0.9,
            margin: 0.3,
            batch_size: 64,
            samples_per_class: 4,
            seed: 0,
            regularizer: RegularizerKind::None,
            hidden_dim: 128,
            embed_dim: 64,
            output_activation: OutputActivation::Relu,
            normalize_output: true,
            eval_interval: 500,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda_max >= 0.0) || !self.lambda_max.is_finite() {
            return fail("lambda_max must be finite and >= 0");
        }
        if self.anneal_t == 0 || self.anneal_t > self.steps {
            return fail("anneal_t must satisfy 1 <= anneal_t <= steps");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return fail("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if !(self.margin > 0.0) {
            return fail("margin must be positive");
        }
        if self.samples_per_class < 2 {
            return fail("samples_per_class must be at least 2");
        }
        if self.batch_size < 2 * self.samples_per_class || self.batch_size % self.samples_per_class != 0 {
            return fail("batch_size must be a multiple of samples_per_class covering >= 2 classes");
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return fail("layer widths must be positive");
        }
        if self.eval_interval == 0 {
            return fail("eval_interval must be positive");
        }
        Ok(())
    }

    pub fn classes_per_batch(&self) -> usize {
        self.batch_size / self.samples_per_class
    }
}

/// Annealed regularization weight `λ · (t/T)²`, held at `λ` from `t = T`.
pub fn anneal_lambda(step: usize, config: &RunConfig) -> f64 {
    if step >= config.anneal_t {
        return config.lambda_max;
    }
    let frac = step as f64 / config.anneal_t as f64;
    config.lambda_max * frac * frac
}
