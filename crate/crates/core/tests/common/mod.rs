//! Checks shared by the topic test files and the acceptance target.
#![allow(dead_code)]

use std::cmp::Ordering;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sparse_embed::gaussian::{
    grad_mean, grad_mean_sq, grad_prob, grad_prob_sq, ks_fit, relu_gauss_mean, relu_gauss_prob,
    KsFit,
};
use sparse_embed::metrics::{relaxed_flops, l1_mean, ActivationBatch};
use sparse_embed::sparse::{InvertedIndex, SparseVec};
use sparse_embed::trainer::{
    batch_triplet_loss, flops_reg_grad, l1_reg_grad, relu, relu_grad, sthresh, sthresh_grad,
    triplet_loss, Dense, EncoderModel, OutputActivation, RegularizerKind, STHRESH_KNEE,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nonzero value in `[-1, -0.01] ∪ [0.01, 1]`.
fn nonzero_value<R: Rng>(rng: &mut R) -> f32 {
    let v: f32 = rng.random_range(0.01..1.0);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Row whose column `j` is nonzero with probability `probs[j]`.
pub fn bernoulli_row<R: Rng>(rng: &mut R, probs: &[f64]) -> SparseVec {
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (j, &p) in probs.iter().enumerate() {
        if rng.random_bool(p) {
            indices.push(j as u32);
            values.push(nonzero_value(rng));
        }
    }
    SparseVec::new(probs.len(), indices, values).unwrap()
}

/// Dense scores accumulated in ascending column order, zeros included.
pub fn dense_scores(rows: &[SparseVec], query: &SparseVec) -> Vec<f32> {
    let q = query.to_dense();
    rows.iter()
        .map(|r| {
            let row = r.to_dense();
            let mut s = 0.0f32;
            for j in 0..q.len() {
                s += q[j] * row[j];
            }
            s
        })
        .collect()
}

/// `|{(i, j) : q_j ≠ 0 ∧ D_ij ≠ 0}|`.
pub fn coincidences(rows: &[SparseVec], query: &SparseVec) -> u64 {
    let q = query.to_dense();
    rows.iter()
        .map(|r| r.indices().iter().filter(|&&j| q[j as usize] != 0.0).count() as u64)
        .sum()
}

/// Full sort of the surviving rows; independent of the library's selection.
pub fn oracle_topk(scores: &[f32], threshold: f32, k: usize) -> Vec<(u32, f32)> {
    let mut hits: Vec<(u32, f32)> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= threshold)
        .map(|(i, &s)| (i as u32, s))
        .collect();
    hits.sort_by(|a, b| match b.1.partial_cmp(&a.1).unwrap() {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    hits.truncate(k);
    hits
}

#[derive(Debug, Default)]
pub struct ExactnessStats {
    pub cases: usize,
    pub max_abs_err: f32,
    pub bit_mismatches: usize,
    pub flops_mismatches: usize,
    pub topk_mismatches: usize,
}

/// Random database/query pairs with `n ≤ max_n`, `d ≤ max_d` and a
/// per-column probability drawn from `{0.01, 0.05, 0.2}`.
pub fn retrieval_exactness(cases: usize, max_n: usize, max_d: usize, seed: u64) -> ExactnessStats {
    let mut rng = rng(seed);
    let mut stats = ExactnessStats::default();
    for case in 0..cases {
        let p = [0.01, 0.05, 0.2][case % 3];
        let n = rng.random_range(1..=max_n);
        let d = rng.random_range(1..=max_d);
        let probs = vec![p; d];
        let rows: Vec<SparseVec> = (0..n).map(|_| bernoulli_row(&mut rng, &probs)).collect();
        // Queries denser than rows so that most cases score something.
        let query = bernoulli_row(&mut rng, &vec![(4.0 * p).min(0.8); d]);
        let index = InvertedIndex::build(&rows, d).unwrap();

        let (scores, flops) = index.spmv(&query).unwrap();
        let expected = dense_scores(&rows, &query);
        for (a, b) in scores.iter().zip(&expected) {
            stats.max_abs_err = stats.max_abs_err.max((a - b).abs());
            if a.to_bits() != b.to_bits() && !(*a == 0.0 && *b == 0.0) {
                stats.bit_mismatches += 1;
            }
        }
        if flops != coincidences(&rows, &query) {
            stats.flops_mismatches += 1;
        }
        let threshold = [f32::NEG_INFINITY, 0.0, 0.25][case % 3];
        let k = rng.random_range(1..=50);
        let result = index.query(&query, threshold, k).unwrap();
        if result.candidates != oracle_topk(&expected, threshold, k) || result.flops_used != flops {
            stats.topk_mismatches += 1;
        }
        stats.cases += 1;
    }
    stats
}

/// Mean `flops_used` over `m` queries drawn from the same per-column
/// probabilities as an `n`-row database, and the law `n Σ p_j²`.
pub fn flops_law(n: usize, m: usize, probs: &[f64], seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let rows: Vec<SparseVec> = (0..n).map(|_| bernoulli_row(&mut rng, probs)).collect();
    let index = InvertedIndex::build(&rows, probs.len()).unwrap();
    let mut scores = Vec::new();
    let mut total = 0u64;
    for _ in 0..m {
        let q = bernoulli_row(&mut rng, probs);
        total += index.spmv_into(&q, &mut scores).unwrap();
    }
    let measured = total as f64 / m as f64;
    let law = n as f64 * probs.iter().map(|p| p * p).sum::<f64>();
    (measured, law)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn vec_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

/// Largest number of standard errors between the closed forms of
/// `E[Y₊]`, `P(Y₊ > 0)` and their Monte-Carlo estimates over the grid.
pub fn moments_monte_carlo(mus: &[f64], sigmas: &[f64], samples: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for &mu in mus {
        for &sigma in sigmas {
            let (mut sum, mut sum_sq, mut hits) = (0.0, 0.0, 0usize);
            for _ in 0..samples {
                let z: f64 = StandardNormal.sample(&mut rng);
                let y = (mu + sigma * z).max(0.0);
                sum += y;
                sum_sq += y * y;
                hits += (y > 0.0) as usize;
            }
            let n = samples as f64;
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean).max(0.0);
            let p_hat = hits as f64 / n;
            let mean_se = (var / n).sqrt();
            let p = relu_gauss_prob(mu, sigma).unwrap();
            let p_se = (p * (1.0 - p) / n).sqrt();
            let exact_mean = relu_gauss_mean(mu, sigma).unwrap();
            for (err, se) in [(mean - exact_mean, mean_se), (p_hat - p, p_se)] {
                if se > 0.0 {
                    worst = worst.max(err.abs() / se);
                } else if err.abs() > 1e-12 {
                    // No sample was positive, yet the closed form is not negligible.
                    worst = f64::INFINITY;
                }
            }
        }
    }
    worst
}

/// Largest relative error of the closed-form gradients (`grad_prob`,
/// `grad_mean`, `grad_mean_sq`, `grad_prob_sq`) against central
/// differences of the closed-form values.
pub fn moment_gradients_fd(mus: &[f64], sigmas: &[f64]) -> f64 {
    type Value = fn(f64, f64) -> f64;
    type Grad = fn(f64, f64) -> (f64, f64);
    let cases: [(Value, Grad); 4] = [
        (|m, s| relu_gauss_prob(m, s).unwrap(), |m, s| grad_prob(m, s).unwrap()),
        (|m, s| relu_gauss_mean(m, s).unwrap(), |m, s| grad_mean(m, s).unwrap()),
        (|m, s| relu_gauss_mean(m, s).unwrap().powi(2), |m, s| grad_mean_sq(m, s).unwrap()),
        (|m, s| relu_gauss_prob(m, s).unwrap().powi(2), |m, s| grad_prob_sq(m, s).unwrap()),
    ];
    // Five-point stencil with a step proportional to σ: the functions vary
    // on the scale of σ, and a fixed tiny step loses the small derivatives
    // to cancellation.
    let five_point = |g: &dyn Fn(f64) -> f64, x: f64, h: f64| {
        (g(x - 2.0 * h) - 8.0 * g(x - h) + 8.0 * g(x + h) - g(x + 2.0 * h)) / (12.0 * h)
    };
    let mut worst: f64 = 0.0;
    for &mu in mus {
        for &sigma in sigmas {
            // Far in the lower tail the values shrink like exp(−z²/2), so the
            // step also shrinks with z².
            let z = mu / sigma;
            let h = 1e-3 * sigma / (1.0 + (-z).max(0.0)).powi(2);
            for (f, g) in cases {
                let (dm, ds) = g(mu, sigma);
                let fd_m = five_point(&|m| f(m, sigma), mu, h);
                let fd_s = five_point(&|s| f(mu, s), sigma, h);
                worst = worst.max(rel_err(dm, fd_m)).max(rel_err(ds, fd_s));
            }
        }
    }
    worst
}

/// ReLU of `n` Gaussian samples.
pub fn relu_gauss_samples(mu: f64, sigma: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (mu + sigma * z).max(0.0)
        })
        .collect()
}

pub fn ks_recovery(mu: f64, sigma: f64, n: usize, seed: u64) -> KsFit {
    ks_fit(&relu_gauss_samples(mu, sigma, n, seed)).unwrap()
}

/// Worst relative errors of every analytic gradient in the trainer,
/// each over `points` random points kept away from kinks.
#[derive(Debug, Default)]
pub struct GradientReport {
    pub checks: Vec<(String, f64, usize)>,
}

impl GradientReport {
    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.1).fold(0.0, f64::max)
    }
}

const H: f64 = 1e-6;
const KINK_GAP: f64 = 1e-3;

fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Central differences of `f` with respect to every entry of `x`.
fn numeric_grad(x: &Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> f64) -> Vec<f64> {
    let mut x = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.as_slice().unwrap()[i];
        x.as_slice_mut().unwrap()[i] = orig + H;
        let up = f(&x);
        x.as_slice_mut().unwrap()[i] = orig - H;
        let down = f(&x);
        x.as_slice_mut().unwrap()[i] = orig;
        out.push((up - down) / (2.0 * H));
    }
    out
}

fn triplet_check<R: Rng>(rng: &mut R) -> Option<f64> {
    let (t, d) = (6, 5);
    let a = normal_matrix(rng, t, d);
    let p = normal_matrix(rng, t, d);
    let n = normal_matrix(rng, t, d);
    let margin = 0.5;
    for i in 0..t {
        let hinge = (&a.row(i) - &p.row(i)).pow2().sum() - (&a.row(i) - &n.row(i)).pow2().sum() + margin;
        if hinge.abs() < KINK_GAP {
            return None;
        }
    }
    let out = triplet_loss(a.view(), p.view(), n.view(), margin);
    let mut worst: f64 = 0.0;
    let grads = [&out.grad_anchors, &out.grad_positives, &out.grad_negatives];
    for (which, analytic) in grads.into_iter().enumerate() {
        let numeric = numeric_grad([&a, &p, &n][which], |x| {
            let (aa, pp, nn) = match which {
                0 => (x, &p, &n),
                1 => (&a, x, &n),
                _ => (&a, &p, x),
            };
            triplet_loss(aa.view(), pp.view(), nn.view(), margin).loss
        });
        worst = worst.max(vec_rel_err(analytic.as_slice().unwrap(), &numeric));
    }
    Some(worst)
}

fn regularizer_check<R: Rng>(rng: &mut R, kind: RegularizerKind) -> Option<f64> {
    let x = normal_matrix(rng, 7, 4);
    if x.iter().any(|v| v.abs() < KINK_GAP) {
        return None;
    }
    let batch = ActivationBatch::new(x.clone()).unwrap();
    let analytic = match kind {
        RegularizerKind::Flops => flops_reg_grad(&batch),
        _ => l1_reg_grad(&batch),
    };
    let numeric = numeric_grad(&x, |x| {
        let b = ActivationBatch::new(x.clone()).unwrap();
        match kind {
            RegularizerKind::Flops => relaxed_flops(&b),
            _ => l1_mean(&b),
        }
    });
    Some(vec_rel_err(analytic.as_slice().unwrap(), &numeric))
}

fn activation_check<R: Rng>(rng: &mut R) -> Option<f64> {
    let x: f64 = rng.random_range(-3.0..3.0);
    if x.abs() < KINK_GAP || (x.abs() - STHRESH_KNEE).abs() < KINK_GAP {
        return None;
    }
    let mut worst: f64 = 0.0;
    for (f, g) in [(sthresh as fn(f64) -> f64, sthresh_grad as fn(f64) -> f64), (relu, relu_grad)] {
        let fd = (f(x + H) - f(x - H)) / (2.0 * H);
        worst = worst.max((g(x) - fd).abs() / g(x).abs().max(1.0));
    }
    Some(worst)
}

/// Gradient through ℓ2 normalization alone: a one-layer identity-weight
/// model, so the bias gradient of a single row is `∂L/∂u`.
fn normalization_check<R: Rng>(rng: &mut R) -> Option<(f64, f64)> {
    let d = 6;
    let bias: Array1<f64> = normal_matrix(rng, 1, d).row(0).to_owned();
    if bias.iter().any(|v| v.abs() < KINK_GAP) {
        return None;
    }
    let target = normal_matrix(rng, 1, d);
    let x = Array2::zeros((1, d));
    let model_with = |b: &Array1<f64>| EncoderModel {
        layers: vec![Dense { weights: Array2::eye(d), bias: b.clone() }],
        output_activation: OutputActivation::Identity,
        normalize_output: true,
    };
    let loss = |b: &Array1<f64>| -> f64 {
        let y = model_with(b).embed(x.view()).unwrap();
        (&y * &target).sum() + y[[0, 0]].powi(3)
    };
    let model = model_with(&bias);
    let pass = model.forward(x.view()).unwrap();
    let mut g = target.clone();
    g[[0, 0]] += 3.0 * pass.output[[0, 0]].powi(2);
    let grads = model.backward(&pass, g.view());
    let analytic = grads.layers[0].bias.to_vec();
    let b2 = bias.clone().insert_axis(ndarray::Axis(0));
    let numeric = numeric_grad(&b2, |b| loss(&b.row(0).to_owned()));
    // ∂L/∂u is orthogonal to u.
    let dot: f64 = analytic.iter().zip(bias.iter()).map(|(a, u)| a * u).sum();
    let ortho = dot.abs() / (bias.dot(&bias).sqrt() * analytic.iter().map(|a| a * a).sum::<f64>().sqrt());
    Some((vec_rel_err(&analytic, &numeric), ortho))
}

fn model_params(model: &EncoderModel) -> Array2<f64> {
    let v: Vec<f64> = model
        .layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
        .collect();
    Array2::from_shape_vec((1, v.len()), v).unwrap()
}

fn with_params(model: &EncoderModel, params: &Array2<f64>) -> EncoderModel {
    let mut m = model.clone();
    let mut it = params.iter().copied();
    for l in &mut m.layers {
        l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
        l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
    }
    m
}

fn near_kink(act: OutputActivation, z: f64) -> bool {
    match act {
        OutputActivation::Relu => z.abs() < KINK_GAP,
        OutputActivation::SThresh => (z.abs() - STHRESH_KNEE).abs() < KINK_GAP,
        OutputActivation::Identity => false,
    }
}

/// Full-model parameter gradient of triplet loss plus λ·penalty on a
/// fixed set of triplets.
fn model_check<R: Rng>(
    rng: &mut R,
    act: OutputActivation,
    normalize: bool,
    reg: RegularizerKind,
) -> Option<f64> {
    let widths = [5, 7, 4];
    let mut model = EncoderModel::init(&widths, act, normalize, rng).unwrap();
    for l in &mut model.layers {
        l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let n = 8;
    let x = normal_matrix(rng, n, widths[0]);
    let triplets: Vec<(usize, usize, usize)> = (0..n).map(|a| (a, (a + 1) % n, (a + 3) % n)).collect();
    let (lambda, margin) = (0.3, 0.5);

    let pass = model.forward(x.view()).unwrap();
    let last = pass.pre_activations.len() - 1;
    for (i, z) in pass.pre_activations.iter().enumerate() {
        let bad = if i == last { z.iter().any(|&z| near_kink(act, z)) } else { z.iter().any(|&z| z.abs() < KINK_GAP) };
        if bad {
            return None;
        }
    }
    if pass.output.rows().into_iter().any(|r| r.iter().all(|&v| v == 0.0)) {
        return None;
    }
    if pass.output.iter().any(|&a| a != 0.0 && a.abs() < KINK_GAP) {
        return None;
    }
    let mut active = 0;
    for &(a, p, ng) in &triplets {
        let y = &pass.output;
        let hinge = (&y.row(a) - &y.row(p)).pow2().sum() - (&y.row(a) - &y.row(ng)).pow2().sum() + margin;
        if hinge.abs() < KINK_GAP {
            return None;
        }
        active += (hinge > 0.0) as usize;
    }
    // A point with no active triplet and no penalty has a locally constant
    // objective; there is nothing to compare.
    if active == 0 {
        return None;
    }

    let objective = |m: &EncoderModel| -> f64 {
        let y = m.embed(x.view()).unwrap();
        let (t, _) = batch_triplet_loss(y.view(), &triplets, margin);
        t + lambda * reg.value(&ActivationBatch::new(y).unwrap())
    };
    let (_, mut grad) = batch_triplet_loss(pass.output.view(), &triplets, margin);
    grad.scaled_add(lambda, &reg.gradient(&ActivationBatch::new(pass.output.clone()).unwrap()));
    let grads = model.backward(&pass, grad.view());
    let analytic: Vec<f64> = grads
        .layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
        .collect();
    let params = model_params(&model);
    let numeric = numeric_grad(&params, |p| objective(&with_params(&model, p)));
    Some(vec_rel_err(&analytic, &numeric))
}

/// Draws until `points` samples pass the kink filter and keeps the worst.
fn sample_worst<R: Rng>(rng: &mut R, points: usize, mut f: impl FnMut(&mut R) -> Option<f64>) -> (f64, usize) {
    let (mut worst, mut got, mut tries) = (0.0f64, 0usize, 0usize);
    while got < points {
        tries += 1;
        assert!(tries < points * 1000, "could not find points away from kinks");
        if let Some(e) = f(rng) {
            worst = worst.max(e);
            got += 1;
        }
    }
    (worst, got)
}

pub fn gradient_suite(points: usize, seed: u64) -> GradientReport {
    let mut rng = rng(seed);
    let mut report = GradientReport::default();
    let (e, k) = sample_worst(&mut rng, points, triplet_check);
    report.checks.push(("triplet".into(), e, k));
    let (e, k) = sample_worst(&mut rng, points, |r| regularizer_check(r, RegularizerKind::Flops));
    report.checks.push(("relaxed_flops".into(), e, k));
    let (e, k) = sample_worst(&mut rng, points, |r| regularizer_check(r, RegularizerKind::L1));
    report.checks.push(("l1".into(), e, k));
    let (e, k) = sample_worst(&mut rng, points, activation_check);
    report.checks.push(("activations".into(), e, k));
    let mut ortho: f64 = 0.0;
    let (e, k) = sample_worst(&mut rng, points, |r| {
        normalization_check(r).map(|(e, o)| {
            ortho = ortho.max(o);
            e
        })
    });
    report.checks.push(("normalization".into(), e, k));
    report.checks.push(("normalization_orthogonality".into(), ortho, k));
    for act in [OutputActivation::Relu, OutputActivation::SThresh, OutputActivation::Identity] {
        for normalize in [true, false] {
            for reg in [RegularizerKind::Flops, RegularizerKind::L1, RegularizerKind::None] {
                let (e, k) = sample_worst(&mut rng, points, |r| model_check(r, act, normalize, reg));
                let norm = if normalize { "norm" } else { "raw" };
                report.checks.push((format!("model_{act:?}_{norm}_{reg}"), e, k));
            }
        }
    }
    report
}

/// Worst relative errors of the pairwise form against `Σ ā_j²` and of the
/// column-group exclusive lasso against `n² F̃`, over random batches of
/// unit-norm rows (some entries exactly zero).
pub fn regularizer_identities(batches: usize, seed: u64) -> (f64, f64) {
    use sparse_embed::metrics::{column_groups, exclusive_lasso, pairwise_abs_similarity};
    let mut rng = rng(seed);
    let (mut pairwise, mut lasso) = (0.0f64, 0.0f64);
    for _ in 0..batches {
        let n = rng.random_range(1..40);
        let d = rng.random_range(1..32);
        let mut x = normal_matrix(&mut rng, n, d);
        x.mapv_inplace(|v| if v.abs() < 0.5 { 0.0 } else { v });
        for mut row in x.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            } else {
                row[0] = 1.0;
            }
        }
        let batch = ActivationBatch::new(x).unwrap();
        let f = relaxed_flops(&batch);
        pairwise = pairwise.max(rel_err(pairwise_abs_similarity(&batch), f));
        let el = exclusive_lasso(&batch, &column_groups(d)).unwrap();
        lasso = lasso.max(rel_err(el, (n * n) as f64 * f));
    }
    (pairwise, lasso)
}
