use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the synthetic clustered dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    pub noise: f64,
    /// Classes held out of training and used only for evaluation.
    pub eval_classes: usize,
    /// Per held-out class, how many samples act as queries; the rest form
    /// the retrieval database.
    pub queries_per_class: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 256,
            per_class: 30,
            input_dim: 128,
            noise: 0.1,
            eval_classes: 64,
            queries_per_class: 10,
            seed: 7,
        }
    }
}

impl DatasetConfig {
    pub fn train_classes(&self) -> usize {
        self.num_classes.saturating_sub(self.eval_classes)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2");
        }
        if self.eval_classes == 0 || self.train_classes() < 2 {
            return fail("need at least 2 training classes and 1 evaluation class");
        }
        if self.per_class < 2 {
            return fail("per_class must be at least 2");
        }
        if self.queries_per_class == 0 || self.queries_per_class >= self.per_class {
            return fail("queries_per_class must lie in 1..per_class");
        }
        if self.input_dim == 0 {
            return fail("input_dim must be positive");
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return fail("noise must be finite and >= 0");
        }
        Ok(())
    }
}

/// Inputs with class labels, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Split {
        Split {
            inputs: self.inputs.select(ndarray::Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Gaussian clusters around random unit centres, split by class into
/// training classes and unseen evaluation classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: DatasetConfig,
    pub centers: Array2<f64>,
    pub train: Split,
    pub eval: Split,
}

fn normalize_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

impl SyntheticDataset {
    pub fn generate(config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dim = config.input_dim;
        let mut centers = Array2::zeros((config.num_classes, dim));
        for mut row in centers.rows_mut() {
            let v = row.as_slice_mut().expect("standard layout");
            v.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
            normalize_in_place(v);
        }
        let train_classes = config.train_classes();
        let mut build = |classes: std::ops::Range<usize>| {
            let n = classes.len() * config.per_class;
            let mut inputs = Array2::zeros((n, dim));
            let mut labels = Vec::with_capacity(n);
            let mut row = 0;
            for c in classes {
                for _ in 0..config.per_class {
                    let mut sample = inputs.row_mut(row);
                    let v = sample.as_slice_mut().expect("standard layout");
                    for (x, &m) in v.iter_mut().zip(centers.row(c)) {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        *x = m + config.noise * g;
                    }
                    normalize_in_place(v);
                    labels.push(c);
                    row += 1;
                }
            }
            Split { inputs, labels }
        };
        let train = build(0..train_classes);
        let eval = build(train_classes..config.num_classes);
        Ok(Self { config: config.clone(), centers, train, eval })
    }

    pub fn center(&self, class: usize) -> ArrayView1<'_, f64> {
        self.centers.row(class)
    }

    /// Splits the evaluation classes into `(queries, database)`: the first
    /// `queries_per_class` samples of each class are queries.
    pub fn eval_queries_and_database(&self) -> (Split, Split) {
        let per = self.config.per_class;
        let q = self.config.queries_per_class;
        let (mut queries, mut database) = (Vec::new(), Vec::new());
        for i in 0..self.eval.len() {
            if i % per < q {
                queries.push(i);
            } else {
                database.push(i);
            }
        }
        (self.eval.select(&queries), self.eval.select(&database))
    }
}
