use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{anneal_lambda, OutputActivation, RunConfig};
use super::data::{Split, SyntheticDataset};
use super::loss::{batch_triplet_loss, mine_triplets};
use super::model::{Dense, EncoderModel};
use crate::error::{Error, Result};
use crate::metrics::{ActivationBatch, SparsityReport};

/// One evaluation pass recorded during training.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lambda: f64,
    /// Training objective on the last batch: triplet + λ · penalty.
    pub loss: f64,
    pub triplet: f64,
    pub penalty: f64,
    /// Statistics of the held-out embeddings.
    pub eval: SparsityReport,
    pub dead_embeddings: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub warnings: Vec<String>,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str = "step,lambda,loss,triplet,penalty,relaxed_flops,l1,p_mean,\
        flops_per_row,r_sub,dead_dimensions,dead_embeddings";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.lambda,
                r.loss,
                r.triplet,
                r.penalty,
                r.eval.relaxed_flops,
                r.eval.l1,
                r.eval.p_mean,
                r.eval.flops_per_row,
                r.eval.r_sub.unwrap_or(f64::NAN),
                r.eval.dead_dimensions(),
                r.dead_embeddings
            );
        }
        out
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }
}

/// Embeds a split and summarizes its sparsity. Also returns the number of
/// all-zero embeddings.
pub fn evaluate(model: &EncoderModel, split: &Split) -> Result<(Array2<f64>, SparsityReport, usize)> {
    let pass = model.forward(split.inputs.view())?;
    let dead = if model.normalize_output {
        pass.dead_rows.len()
    } else {
        pass.output.rows().into_iter().filter(|r| r.iter().all(|&v| v == 0.0)).count()
    };
    let batch = ActivationBatch::new(pass.output)?;
    let report = SparsityReport::from_batch(&batch);
    Ok((batch.into_inner(), report, dead))
}

struct Momentum {
    velocity: Vec<Dense>,
}

impl Momentum {
    fn new(model: &EncoderModel) -> Self {
        let velocity = model
            .layers
            .iter()
            .map(|l| Dense { weights: Array2::zeros(l.weights.dim()), bias: ndarray::Array1::zeros(l.bias.len()) })
            .collect();
        Self { velocity }
    }

    /// `v ← μ v + g`, `θ ← θ − lr v`.
    fn step(&mut self, model: &mut EncoderModel, grads: &[Dense], lr: f64, momentum: f64) {
        for ((layer, v), g) in model.layers.iter_mut().zip(&mut self.velocity).zip(grads) {
            v.weights.zip_mut_with(&g.weights, |v, &g| *v = momentum * *v + g);
            v.bias.zip_mut_with(&g.bias, |v, &g| *v = momentum * *v + g);
            layer.weights.scaled_add(-lr, &v.weights);
            layer.bias.scaled_add(-lr, &v.bias);
        }
    }
}

/// Rows of `split` grouped by class.
fn rows_by_class(split: &Split) -> Vec<Vec<usize>> {
    let mut classes: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, &y) in split.labels.iter().enumerate() {
        match classes.iter_mut().find(|(c, _)| *c == y) {
            Some((_, rows)) => rows.push(i),
            None => classes.push((y, vec![i])),
        }
    }
    classes.into_iter().map(|(_, rows)| rows).collect()
}

/// Trains an encoder with triplet loss plus the annealed sparsity penalty.
/// Single-threaded and fully determined by `config.seed`.
pub fn train(config: &RunConfig, dataset: &SyntheticDataset) -> Result<(EncoderModel, TrainingLog)> {
    config.validate()?;
    let classes = rows_by_class(&dataset.train);
    let mut log = TrainingLog::default();
    if config.embed_dim >= classes.len() {
        log.warnings.push(format!(
            "embedding dimension {} is not smaller than the {} training classes; \
             a one-hot class code can minimize the loss",
            config.embed_dim,
            classes.len()
        ));
    }
    let per_batch = config.classes_per_batch();
    if per_batch > classes.len() {
        return Err(Error::Config(format!(
            "batch needs {per_batch} classes but only {} are available",
            classes.len()
        )));
    }
    if let Some(c) = classes.iter().find(|rows| rows.len() < config.samples_per_class) {
        return Err(Error::Config(format!(
            "a training class has {} samples, fewer than samples_per_class",
            c.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let widths = [dataset.config.input_dim, config.hidden_dim, config.embed_dim];
    let mut model =
        EncoderModel::init(&widths, config.output_activation, config.normalize_output, &mut rng)?;
    let draw_batch = |rng: &mut ChaCha8Rng| -> (Vec<usize>, Vec<usize>) {
        let mut rows = Vec::with_capacity(config.batch_size);
        let mut labels = Vec::with_capacity(config.batch_size);
        for c in sample(rng, classes.len(), per_batch).into_iter() {
            for k in sample(rng, classes[c].len(), config.samples_per_class).into_iter() {
                rows.push(classes[c][k]);
                labels.push(c);
            }
        }
        (rows, labels)
    };

    if config.output_activation == OutputActivation::SThresh {
        // Start with unit-scale pre-activations so the dead zone does not
        // swallow everything.
        let (rows, _) = draw_batch(&mut rng);
        let pass = model.forward(dataset.train.inputs.select(Axis(0), &rows).view())?;
        let z = pass.pre_activations.last().expect("output layer");
        let std = z.std(0.0);
        if std > 0.0 {
            let last = model.layers.last_mut().expect("output layer");
            last.weights.mapv_inplace(|w| w / std);
        }
    }

    let mut optimizer = Momentum::new(&model);
    for step in 0..config.steps {
        let (rows, labels) = draw_batch(&mut rng);
        let inputs = dataset.train.inputs.select(Axis(0), &rows);
        let pass = model.forward(inputs.view())?;
        let triplets = mine_triplets(pass.output.view(), &labels, &mut rng);
        let (triplet, mut grad) = batch_triplet_loss(pass.output.view(), &triplets, config.margin);

        let lambda = anneal_lambda(step, config);
        let batch = ActivationBatch::new(pass.output.clone())
            .map_err(|e| Error::Numerical(format!("step {step}: {e}")))?;
        let penalty = config.regularizer.value(&batch);
        if lambda > 0.0 {
            grad.scaled_add(lambda, &config.regularizer.gradient(&batch));
        }
        let loss = triplet + lambda * penalty;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {loss} at step {step}")));
        }

        let grads = model.backward(&pass, grad.view());
        optimizer.step(&mut model, &grads.layers, config.lr, config.momentum);
        if !model.is_finite() {
            return Err(Error::Numerical(format!("parameters diverged at step {step}")));
        }

        let done = step + 1 == config.steps;
        if (step + 1) % config.eval_interval == 0 || done {
            let (_, eval, dead_embeddings) = evaluate(&model, &dataset.eval)?;
            log.rows.push(LogRow { step: step + 1, lambda, loss, triplet, penalty, eval, dead_embeddings });
        }
    }
    Ok((model, log))
}
