//! Standard normal density and distribution function.
//!
//! `Φ` is evaluated through `erfc` rather than `1 + erf`, so both tails keep
//! full relative precision.

use std::f64::consts::FRAC_1_SQRT_2;

/// `1 / √(2π)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}
