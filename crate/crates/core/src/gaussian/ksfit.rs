//! Fitting a rectified Gaussian to non-negative activations by minimizing
//! the Kolmogorov–Smirnov distance between its CDF and the empirical CDF.

use crate::error::{Error, Result};
use crate::special::normal_cdf;

pub const MIN_SAMPLES: usize = 100;
const GRID: usize = 101;
const MU_RANGE: (f64, f64) = (-5.0, 5.0);
const SIGMA_MAX: f64 = 5.0;
const REFINE_ITERS: usize = 200;
/// Stride of the cheap lower bound used to skip hopeless grid points.
const BOUND_STRIDE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsFit {
    pub mu: f64,
    pub sigma: f64,
    pub ks_distance: f64,
    /// No positive samples: any fit with `Φ(−μ/σ) → 1` is equally good.
    pub degenerate: bool,
}

/// CDF of `max(Y, 0)`, `Y ~ N(μ, σ²)`.
pub fn relu_gauss_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        normal_cdf((x - mu) / sigma)
    }
}

/// Sorted non-negative samples with the point mass at zero split off.
#[derive(Debug, Clone)]
pub struct Activations {
    sorted: Vec<f64>,
    zeros: usize,
}

impl Activations {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.len() < MIN_SAMPLES {
            return Err(Error::Domain(format!(
                "KS fit needs at least {MIN_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        if let Some(x) = samples.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::Domain(format!("samples must be finite and non-negative, got {x}")));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let zeros = sorted.iter().take_while(|&&x| x == 0.0).count();
        Ok(Self { sorted, zeros })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of samples `≤ x`.
    pub fn ecdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.len() as f64
    }

    /// Exact sup-norm distance to the rectified-Gaussian CDF.
    pub fn ks_distance(&self, mu: f64, sigma: f64) -> f64 {
        self.ks_over(mu, sigma, 1)
    }

    /// Sup over the zero atom and every `stride`-th positive sample. Each
    /// term is attained by the true statistic, so this never exceeds
    /// [`ks_distance`](Self::ks_distance).
    fn ks_over(&self, mu: f64, sigma: f64, stride: usize) -> f64 {
        let n = self.len() as f64;
        let mut d = (self.zeros as f64 / n - normal_cdf(-mu / sigma)).abs();
        for i in (self.zeros..self.sorted.len()).step_by(stride) {
            let f = normal_cdf((self.sorted[i] - mu) / sigma);
            let below = i as f64 / n;
            let above = (i + 1) as f64 / n;
            d = d.max((f - below).abs()).max((above - f).abs());
        }
        d
    }
}

fn grid_points() -> impl Iterator<Item = (f64, f64)> {
    (0..GRID).flat_map(|i| {
        let mu = MU_RANGE.0 + (MU_RANGE.1 - MU_RANGE.0) * i as f64 / (GRID - 1) as f64;
        (0..GRID).map(move |k| (mu, SIGMA_MAX * (k + 1) as f64 / GRID as f64))
    })
}

/// Fits `(μ, σ)` by a 101×101 grid over `μ ∈ [−5, 5]`, `σ ∈ (0, 5]`,
/// followed by Nelder–Mead refinement from the best grid point.
pub fn ks_fit(samples: &[f64]) -> Result<KsFit> {
    let acts = Activations::new(samples)?;
    let mut best = (f64::INFINITY, 0.0, 1.0);
    for (mu, sigma) in grid_points() {
        if acts.ks_over(mu, sigma, BOUND_STRIDE) >= best.0 {
            continue;
        }
        let d = acts.ks_distance(mu, sigma);
        if d < best.0 {
            best = (d, mu, sigma);
        }
    }
    let objective = |p: [f64; 2]| {
        if p[1] > 0.0 && p[0].is_finite() {
            acts.ks_distance(p[0], p[1])
        } else {
            f64::INFINITY
        }
    };
    let (point, value) = nelder_mead(
        objective,
        [best.1, best.2],
        [0.5 * (MU_RANGE.1 - MU_RANGE.0) / (GRID - 1) as f64, 0.5 * SIGMA_MAX / GRID as f64],
        REFINE_ITERS,
    );
    let (ks_distance, mu, sigma) = if value < best.0 { (value, point[0], point[1]) } else { best };
    Ok(KsFit { mu, sigma, ks_distance, degenerate: acts.zeros == acts.len() })
}

/// Minimizes `f` over two parameters from `start` with an initial simplex
/// spanned by `step`. Returns the best vertex and its value.
fn nelder_mead<F: Fn([f64; 2]) -> f64>(
    f: F,
    start: [f64; 2],
    step: [f64; 2],
    iters: usize,
) -> ([f64; 2], f64) {
    let mut simplex: Vec<([f64; 2], f64)> = vec![
        start,
        [start[0] + step[0], start[1]],
        [start[0], start[1] + step[1]],
    ]
    .into_iter()
    .map(|p| (p, f(p)))
    .collect();
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let centroid = [
            0.5 * (simplex[0].0[0] + simplex[1].0[0]),
            0.5 * (simplex[0].0[1] + simplex[1].0[1]),
        ];
        let worst = simplex[2];
        let reflected = lerp(worst.0, centroid, 2.0);
        let fr = f(reflected);
        if fr < simplex[0].1 {
            let expanded = lerp(worst.0, centroid, 3.0);
            let fe = f(expanded);
            simplex[2] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (reflected, fr);
        } else {
            let contracted = if fr < worst.1 {
                lerp(worst.0, centroid, 1.5)
            } else {
                lerp(worst.0, centroid, 0.5)
            };
            let fc = f(contracted);
            if fc < worst.1.min(fr) {
                simplex[2] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let p = lerp(best, v.0, 0.5);
                    *v = (p, f(p));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// Empirical and fitted CDF evaluated on `points` evenly spaced values from
/// 0 to the largest sample.
pub fn cdf_table(samples: &[f64], fit: &KsFit, points: usize) -> Result<Vec<(f64, f64, f64)>> {
    let acts = Activations::new(samples)?;
    let max = acts.sorted.last().copied().unwrap_or(0.0);
    let points = points.max(2);
    Ok((0..points)
        .map(|i| {
            let x = max * i as f64 / (points - 1) as f64;
            (x, acts.ecdf(x), relu_gauss_cdf(x, fit.mu, fit.sigma))
        })
        .collect())
}
