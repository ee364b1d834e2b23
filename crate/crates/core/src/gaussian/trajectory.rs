//! Gradient descent of population sparsity regularizers directly on the
//! per-dimension `(μ, σ)` of a rectified-Gaussian activation model.

use std::fmt;
use std::str::FromStr;

use super::moments::{grad_mean, grad_mean_sq, grad_prob, grad_prob_sq, GaussianDim};
use crate::error::{Error, Result};

/// Lower bound σ is clamped to during descent.
pub const SIGMA_MIN: f64 = 1e-4;

/// Population regularizers over rectified-Gaussian activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopulationRegularizer {
    /// `Σ_j P(Y_j₊ > 0)²`, the exact expected FLOPs per row.
    Flops,
    /// `Σ_j E[Y_j₊]²`.
    RelaxedFlops,
    /// `Σ_j E[Y_j₊]`.
    L1,
}

impl PopulationRegularizer {
    pub const ALL: [Self; 3] = [Self::Flops, Self::RelaxedFlops, Self::L1];

    /// Gradient of this regularizer's term for one dimension.
    pub fn gradient(self, dim: GaussianDim) -> Result<(f64, f64)> {
        match self {
            Self::Flops => grad_prob_sq(dim.mu, dim.sigma),
            Self::RelaxedFlops => grad_mean_sq(dim.mu, dim.sigma),
            Self::L1 => grad_mean(dim.mu, dim.sigma),
        }
    }

    pub fn value(self, dims: &[GaussianDim]) -> f64 {
        dims.iter()
            .map(|d| match self {
                Self::Flops => d.activation_probability().powi(2),
                Self::RelaxedFlops => d.relu_mean().powi(2),
                Self::L1 => d.relu_mean(),
            })
            .sum()
    }
}

impl fmt::Display for PopulationRegularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Flops => "F",
            Self::RelaxedFlops => "F_TILDE",
            Self::L1 => "L1",
        })
    }
}

impl FromStr for PopulationRegularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "F" | "FLOPS" => Ok(Self::Flops),
            "F_TILDE" | "FTILDE" | "RELAXED" => Ok(Self::RelaxedFlops),
            "L1" => Ok(Self::L1),
            _ => Err(Error::Config(format!("unknown regularizer `{s}` (expected F, F_TILDE or L1)"))),
        }
    }
}

/// Instantaneous rate of change of every activation probability under
/// gradient flow of `reg`, per unit learning rate.
pub fn probability_rates(dims: &[GaussianDim], reg: PopulationRegularizer) -> Result<Vec<f64>> {
    dims.iter()
        .map(|&d| {
            let (gm, gs) = reg.gradient(d)?;
            let (pm, ps) = grad_prob(d.mu, d.sigma)?;
            Ok(-(pm * gm + ps * gs))
        })
        .collect()
}

/// `ṗ₁ / ṗ₂`: how much faster the first dimension is being sparsified.
pub fn rate_ratio(dims: &[GaussianDim], reg: PopulationRegularizer) -> Result<f64> {
    if dims.len() < 2 {
        return Err(Error::Domain("rate ratio needs at least two dimensions".into()));
    }
    let rates = probability_rates(dims, reg)?;
    Ok(rates[0] / rates[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOptions {
    pub lr: f64,
    pub max_steps: usize,
    /// Stop once every activation probability falls below this value.
    pub stop_below: Option<f64>,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self { lr: 1e-3, max_steps: 1_000_000, stop_below: Some(0.01) }
    }
}

/// One recorded point of a trajectory (before the update of `step`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub dims: Vec<GaussianDim>,
    pub probabilities: Vec<f64>,
    pub rate_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub regularizer: PopulationRegularizer,
    pub lr: f64,
    pub history: Vec<TrajectoryPoint>,
    /// Whether the stop criterion was met before `max_steps`.
    pub reached_stop: bool,
    /// Whether any σ had to be clamped at [`SIGMA_MIN`].
    pub sigma_clamped: bool,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryPoint {
        self.history.last().expect("trajectory records the initial point")
    }

    pub const CSV_HEADER: &'static str = "step,p1,p2,mu1,mu2,sigma1,sigma2,rate_ratio";

    /// Rows for two-dimensional trajectories, every `stride` steps plus the
    /// final point.
    pub fn csv_rows(&self, stride: usize) -> Vec<String> {
        let stride = stride.max(1);
        let last = self.history.len() - 1;
        self.history
            .iter()
            .enumerate()
            .filter(|(i, _)| i % stride == 0 || *i == last)
            .map(|(_, p)| {
                let d = &p.dims;
                format!(
                    "{},{},{},{},{},{},{},{}",
                    p.step,
                    p.probabilities[0],
                    p.probabilities[1],
                    d[0].mu,
                    d[1].mu,
                    d[0].sigma,
                    d[1].sigma,
                    p.rate_ratio
                )
            })
            .collect()
    }
}

/// The toy initialization `(μ₁, μ₂, σ₁, σ₂) = (−1/4, −1.3, 1, 1)`.
pub fn default_init() -> Vec<GaussianDim> {
    vec![GaussianDim { mu: -0.25, sigma: 1.0 }, GaussianDim { mu: -1.3, sigma: 1.0 }]
}

fn record(step: usize, dims: &[GaussianDim], reg: PopulationRegularizer) -> Result<TrajectoryPoint> {
    let rate_ratio = if dims.len() >= 2 { rate_ratio(dims, reg)? } else { f64::NAN };
    Ok(TrajectoryPoint {
        step,
        dims: dims.to_vec(),
        probabilities: dims.iter().map(GaussianDim::activation_probability).collect(),
        rate_ratio,
    })
}

/// Plain gradient descent on `(μ_j, σ_j)` for the chosen regularizer,
/// recording the state before every update and after the last one.
pub fn run_trajectory(
    init: &[GaussianDim],
    reg: PopulationRegularizer,
    opts: TrajectoryOptions,
) -> Result<Trajectory> {
    if init.is_empty() {
        return Err(Error::Domain("trajectory needs at least one dimension".into()));
    }
    if !(opts.lr > 0.0) || opts.max_steps == 0 {
        return Err(Error::Domain("need lr > 0 and at least one step".into()));
    }
    for d in init {
        GaussianDim::new(d.mu, d.sigma)?;
    }
    let mut dims = init.to_vec();
    let mut history = vec![record(0, &dims, reg)?];
    let mut reached_stop = false;
    let mut sigma_clamped = false;
    for step in 1..=opts.max_steps {
        for d in dims.iter_mut() {
            let (gm, gs) = reg.gradient(*d)?;
            d.mu -= opts.lr * gm;
            d.sigma -= opts.lr * gs;
            if d.sigma < SIGMA_MIN {
                d.sigma = SIGMA_MIN;
                sigma_clamped = true;
            }
        }
        let point = record(step, &dims, reg)?;
        let done = opts
            .stop_below
            .is_some_and(|t| point.probabilities.iter().all(|&p| p < t));
        history.push(point);
        if done {
            reached_stop = true;
            break;
        }
    }
    Ok(Trajectory { regularizer: reg, lr: opts.lr, history, reached_stop, sigma_clamped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_names() {
        for reg in PopulationRegularizer::ALL {
            assert_eq!(reg.to_string().parse::<PopulationRegularizer>().unwrap(), reg);
        }
        assert!("l2".parse::<PopulationRegularizer>().is_err());
    }

    #[test]
    fn rejects_bad_options() {
        let init = default_init();
        let bad = TrajectoryOptions { lr: 0.0, ..Default::default() };
        assert!(run_trajectory(&init, PopulationRegularizer::L1, bad).is_err());
        assert!(run_trajectory(&[], PopulationRegularizer::L1, Default::default()).is_err());
        let bad_init = [GaussianDim { mu: 0.0, sigma: -1.0 }];
        assert!(run_trajectory(&bad_init, PopulationRegularizer::L1, Default::default()).is_err());
    }

    #[test]
    fn all_regularizers_sparsify_monotonically() {
        for reg in PopulationRegularizer::ALL {
            let t = run_trajectory(&default_init(), reg, TrajectoryOptions::default()).unwrap();
            assert!(t.reached_stop, "{reg} did not reach the stop criterion");
            assert!(t.last().probabilities.iter().all(|&p| p < 0.01));
            for w in t.history.windows(2) {
                for j in 0..2 {
                    assert!(w[1].probabilities[j] <= w[0].probabilities[j], "{reg} step {}", w[1].step);
                }
            }
        }
    }

    #[test]
    fn flops_regularizers_favor_denser_dimension() {
        let init = default_init();
        let l1 = rate_ratio(&init, PopulationRegularizer::L1).unwrap();
        for reg in [PopulationRegularizer::Flops, PopulationRegularizer::RelaxedFlops] {
            assert!(rate_ratio(&init, reg).unwrap() > l1, "{reg}");
        }
    }

    #[test]
    fn self_convergence_under_halved_step() {
        for reg in PopulationRegularizer::ALL {
            let coarse = TrajectoryOptions { lr: 1e-3, max_steps: 2000, stop_below: None };
            let fine = TrajectoryOptions { lr: 5e-4, max_steps: 4000, stop_below: None };
            let a = run_trajectory(&default_init(), reg, coarse).unwrap();
            let b = run_trajectory(&default_init(), reg, fine).unwrap();
            for j in 0..2 {
                let diff = (a.last().probabilities[j] - b.last().probabilities[j]).abs();
                assert!(diff < 1e-3, "{reg} p{} differs by {diff}", j + 1);
            }
        }
    }

    #[test]
    fn csv_rows_are_thinned_but_keep_final_point() {
        let opts = TrajectoryOptions { lr: 1e-3, max_steps: 25, stop_below: None };
        let t = run_trajectory(&default_init(), PopulationRegularizer::L1, opts).unwrap();
        let rows = t.csv_rows(10);
        assert_eq!(rows.len(), 4);
        assert!(rows[0].starts_with("0,"));
        assert!(rows[3].starts_with("25,"));
        assert_eq!(Trajectory::CSV_HEADER.split(',').count(), rows[0].split(',').count());
    }
}
