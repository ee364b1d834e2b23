//! Closed-form moments of a rectified Gaussian `Y₊ = max(Y, 0)` with
//! `Y ~ N(μ, σ²)`, and their gradients with respect to `(μ, σ)`.
//!
//! All gradients are returned as `(∂/∂μ, ∂/∂σ)`.

use crate::error::{Error, Result};
use crate::special::{normal_cdf, normal_pdf};

/// Mean and standard deviation of one pre-activation dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianDim {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianDim {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        check(mu, sigma)?;
        Ok(Self { mu, sigma })
    }

    pub fn activation_probability(&self) -> f64 {
        normal_cdf(self.mu / self.sigma)
    }

    pub fn relu_mean(&self) -> f64 {
        let z = self.mu / self.sigma;
        self.sigma * normal_pdf(z) + self.mu * normal_cdf(z)
    }
}

fn check(mu: f64, sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
        return Err(Error::Domain(format!("need finite mu and sigma > 0, got ({mu}, {sigma})")));
    }
    Ok(())
}

/// `E[Y₊] = σ φ(μ/σ) + μ (1 − Φ(−μ/σ))`.
pub fn relu_gauss_mean(mu: f64, sigma: f64) -> Result<f64> {
    Ok(GaussianDim::new(mu, sigma)?.relu_mean())
}

/// `P(Y₊ > 0) = 1 − Φ(−μ/σ)`.
pub fn relu_gauss_prob(mu: f64, sigma: f64) -> Result<f64> {
    Ok(GaussianDim::new(mu, sigma)?.activation_probability())
}

/// Gradient of `P(Y₊ > 0)`.
pub fn grad_prob(mu: f64, sigma: f64) -> Result<(f64, f64)> {
    check(mu, sigma)?;
    let density = normal_pdf(mu / sigma) / sigma;
    Ok((density, -mu / sigma * density))
}

/// Gradient of `E[Y₊]`.
pub fn grad_mean(mu: f64, sigma: f64) -> Result<(f64, f64)> {
    check(mu, sigma)?;
    Ok((normal_cdf(mu / sigma), normal_pdf(mu / sigma)))
}

/// Gradient of `E[Y₊]²`.
pub fn grad_mean_sq(mu: f64, sigma: f64) -> Result<(f64, f64)> {
    let mean = relu_gauss_mean(mu, sigma)?;
    let (dm, ds) = grad_mean(mu, sigma)?;
    Ok((2.0 * mean * dm, 2.0 * mean * ds))
}

/// Gradient of `P(Y₊ > 0)²`.
pub fn grad_prob_sq(mu: f64, sigma: f64) -> Result<(f64, f64)> {
    let p = relu_gauss_prob(mu, sigma)?;
    let (dm, ds) = grad_prob(mu, sigma)?;
    Ok((2.0 * p * dm, 2.0 * p * ds))
}
