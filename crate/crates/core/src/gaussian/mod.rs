//! Analytical model of rectified-Gaussian activations: closed-form moments
//! and gradients, regularizer trajectories, and KS-distance fitting.

mod ksfit;
mod moments;
mod trajectory;

pub use ksfit::{cdf_table, ks_fit, relu_gauss_cdf, Activations, KsFit, MIN_SAMPLES};
pub use moments::{
    grad_mean, grad_mean_sq, grad_prob, grad_prob_sq, relu_gauss_mean, relu_gauss_prob,
    GaussianDim,
};
pub use trajectory::{
    default_init, probability_rates, rate_ratio, run_trajectory, PopulationRegularizer,
    Trajectory, TrajectoryOptions, TrajectoryPoint, SIGMA_MIN,
};
