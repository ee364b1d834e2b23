use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::OutputActivation;
use crate::error::{Error, Result};

/// Dead-zone half width of [`sthresh`].
pub const STHRESH_KNEE: f64 = 0.5;

/// Soft thresholding `sgn(x) · max(|x| − 1/2, 0)`.
pub fn sthresh(x: f64) -> f64 {
    let shrunk = x.abs() - STHRESH_KNEE;
    if shrunk > 0.0 {
        shrunk.copysign(x)
    } else {
        0.0
    }
}

pub fn sthresh_vec(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| sthresh(x)).collect()
}

/// Subgradient of [`sthresh`]; 0 at the knees.
pub fn sthresh_grad(x: f64) -> f64 {
    if x.abs() > STHRESH_KNEE {
        1.0
    } else {
        0.0
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Subgradient of [`relu`]; 0 at the kink.
pub fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

impl OutputActivation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => relu(x),
            Self::SThresh => sthresh(x),
            Self::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Self::Relu => relu_grad(x),
            Self::SThresh => sthresh_grad(x),
            Self::Identity => 1.0,
        }
    }
}

/// Affine map `x · weights + bias`, weights stored `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// He-normal weights, zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng));
        Self { weights, bias: Array1::zeros(fan_out) }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

/// Multi-layer perceptron with ReLU hidden layers, a configurable embedding
/// activation and optional ℓ2 normalization of the output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub layers: Vec<Dense>,
    pub output_activation: OutputActivation,
    pub normalize_output: bool,
}

/// Intermediates kept from [`EncoderModel::forward`] for backprop.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input to every layer (`inputs[0]` is the batch itself).
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation output of every layer.
    pub pre_activations: Vec<Array2<f64>>,
    /// Embedding-layer activation before normalization.
    pub unnormalized: Array2<f64>,
    /// Row norms of `unnormalized` (all 1 when normalization is off).
    pub norms: Vec<f64>,
    pub output: Array2<f64>,
    /// Rows whose activation was entirely zero and could not be normalized.
    pub dead_rows: Vec<usize>,
}

/// Parameter gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl EncoderModel {
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        output_activation: OutputActivation,
        normalize_output: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Ok(Self { layers, output_activation, normalize_output })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").fan_out()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<ForwardPass> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), batch.ncols()));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = batch.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&x.view());
            inputs.push(x);
            x = if i == last {
                z.mapv(|v| self.output_activation.apply(v))
            } else {
                z.mapv(relu)
            };
            pre_activations.push(z);
        }
        let unnormalized = x;
        let mut output = unnormalized.clone();
        let mut norms = vec![1.0; output.nrows()];
        let mut dead_rows = Vec::new();
        if self.normalize_output {
            for (i, mut row) in output.axis_iter_mut(Axis(0)).enumerate() {
                let norm = row.dot(&row).sqrt();
                norms[i] = norm;
                if norm > 0.0 {
                    row.mapv_inplace(|v| v / norm);
                } else {
                    dead_rows.push(i);
                }
            }
        }
        Ok(ForwardPass { inputs, pre_activations, unnormalized, norms, output, dead_rows })
    }

    /// Embeddings only.
    pub fn embed(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(batch)?.output)
    }

    /// Backpropagates `grad_output = ∂L/∂output` through the cached pass.
    pub fn backward(&self, pass: &ForwardPass, grad_output: ArrayView2<f64>) -> Gradients {
        let mut grad = grad_output.to_owned();
        if self.normalize_output {
            // y = u/‖u‖  ⇒  ∂L/∂u = (g − y⟨y, g⟩)/‖u‖; zero rows pass nothing.
            for (i, mut g) in grad.axis_iter_mut(Axis(0)).enumerate() {
                let norm = pass.norms[i];
                if norm > 0.0 {
                    let y = pass.output.row(i);
                    let proj = y.dot(&g);
                    Zip::from(&mut g).and(&y).for_each(|g, &y| *g = (*g - y * proj) / norm);
                } else {
                    g.fill(0.0);
                }
            }
        }
        let last = self.layers.len() - 1;
        let mut layers = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let z = &pass.pre_activations[i];
            if i == last {
                Zip::from(&mut grad).and(z).for_each(|g, &z| *g *= self.output_activation.derivative(z));
            } else {
                Zip::from(&mut grad).and(z).for_each(|g, &z| *g *= relu_grad(z));
            }
            let weights = pass.inputs[i].t().dot(&grad);
            let bias = grad.sum_axis(Axis(0));
            if i > 0 {
                grad = grad.dot(&self.layers[i].weights.t());
            }
            layers.push(Dense { weights, bias });
        }
        layers.reverse();
        Gradients { layers }
    }
}
