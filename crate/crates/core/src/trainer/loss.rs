use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::config::RegularizerKind;
use crate::metrics::{mean_abs_activations, ActivationBatch};

/// Mean triplet hinge loss and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutput {
    pub loss: f64,
    pub grad_anchors: Array2<f64>,
    pub grad_positives: Array2<f64>,
    pub grad_negatives: Array2<f64>,
    /// Triplets with a positive hinge.
    pub active: usize,
}

/// `mean_t max(0, ‖a−p‖² − ‖a−n‖² + margin)` over row-aligned triplets.
pub fn triplet_loss(
    anchors: ArrayView2<f64>,
    positives: ArrayView2<f64>,
    negatives: ArrayView2<f64>,
    margin: f64,
) -> TripletOutput {
    assert_eq!(anchors.dim(), positives.dim(), "anchor/positive shape");
    assert_eq!(anchors.dim(), negatives.dim(), "anchor/negative shape");
    let t = anchors.nrows();
    let mut out = TripletOutput {
        loss: 0.0,
        grad_anchors: Array2::zeros(anchors.dim()),
        grad_positives: Array2::zeros(anchors.dim()),
        grad_negatives: Array2::zeros(anchors.dim()),
        active: 0,
    };
    if t == 0 {
        return out;
    }
    let scale = 1.0 / t as f64;
    for i in 0..t {
        let (a, p, n) = (anchors.row(i), positives.row(i), negatives.row(i));
        let ap = &a - &p;
        let an = &a - &n;
        let hinge = ap.dot(&ap) - an.dot(&an) + margin;
        if hinge <= 0.0 {
            continue;
        }
        out.active += 1;
        out.loss += hinge * scale;
        // ∂/∂a = 2(n − p), ∂/∂p = −2(a − p), ∂/∂n = 2(a − n)
        out.grad_anchors.row_mut(i).assign(&((&n - &p) * (2.0 * scale)));
        out.grad_positives.row_mut(i).assign(&(&ap * (-2.0 * scale)));
        out.grad_negatives.row_mut(i).assign(&(&an * (2.0 * scale)));
    }
    out
}

/// Triplets mined inside a labelled batch: every row is an anchor with a
/// random same-class positive and the closest other-class negative.
pub fn mine_triplets<R: Rng + ?Sized>(
    embeddings: ArrayView2<f64>,
    labels: &[usize],
    rng: &mut R,
) -> Vec<(usize, usize, usize)> {
    let n = labels.len();
    let gram = embeddings.dot(&embeddings.t());
    let sq: Vec<f64> = (0..n).map(|i| gram[[i, i]]).collect();
    let mut triplets = Vec::with_capacity(n);
    for a in 0..n {
        let same: Vec<usize> = (0..n).filter(|&j| j != a && labels[j] == labels[a]).collect();
        if same.is_empty() {
            continue;
        }
        let p = same[rng.random_range(0..same.len())];
        let neg = (0..n)
            .filter(|&j| labels[j] != labels[a])
            .map(|j| (j, sq[a] + sq[j] - 2.0 * gram[[a, j]]))
            .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        if let Some((neg, _)) = neg {
            triplets.push((a, p, neg));
        }
    }
    triplets
}

/// Triplet loss over mined triplets with the gradient scattered back onto
/// the embedding rows.
pub fn batch_triplet_loss(
    embeddings: ArrayView2<f64>,
    triplets: &[(usize, usize, usize)],
    margin: f64,
) -> (f64, Array2<f64>) {
    let pick = |k: usize| -> Vec<usize> {
        triplets
            .iter()
            .map(|t| match k {
                0 => t.0,
                1 => t.1,
                _ => t.2,
            })
            .collect()
    };
    let (ia, ip, ineg) = (pick(0), pick(1), pick(2));
    let out = triplet_loss(
        embeddings.select(Axis(0), &ia).view(),
        embeddings.select(Axis(0), &ip).view(),
        embeddings.select(Axis(0), &ineg).view(),
        margin,
    );
    let mut grad = Array2::zeros(embeddings.dim());
    for (t, ((&a, &p), &n)) in ia.iter().zip(&ip).zip(&ineg).enumerate() {
        let mut row = grad.row_mut(a);
        row += &out.grad_anchors.row(t);
        let mut row = grad.row_mut(p);
        row += &out.grad_positives.row(t);
        let mut row = grad.row_mut(n);
        row += &out.grad_negatives.row(t);
    }
    (out.loss, grad)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `∂F̃/∂a_ij = (2/n) ā_j sgn(a_ij)` with `sgn(0) = 0`.
pub fn flops_reg_grad(batch: &ActivationBatch) -> Array2<f64> {
    let a_bar = mean_abs_activations(batch);
    let scale = 2.0 / batch.n() as f64;
    let mut grad = batch.view().mapv(sign);
    for mut row in grad.rows_mut() {
        row.iter_mut().zip(&a_bar).for_each(|(g, a)| *g *= scale * a);
    }
    grad
}

/// `∂(Σ_j ā_j)/∂a_ij = sgn(a_ij) / n`.
pub fn l1_reg_grad(batch: &ActivationBatch) -> Array2<f64> {
    let scale = 1.0 / batch.n() as f64;
    batch.view().mapv(|v| sign(v) * scale)
}

impl RegularizerKind {
    /// Penalty value on a batch.
    pub fn value(self, batch: &ActivationBatch) -> f64 {
        match self {
            Self::Flops => crate::metrics::relaxed_flops(batch),
            Self::L1 => crate::metrics::l1_mean(batch),
            Self::None => 0.0,
        }
    }

    /// Penalty gradient with respect to every activation.
    pub fn gradient(self, batch: &ActivationBatch) -> Array2<f64> {
        match self {
            Self::Flops => flops_reg_grad(batch),
            Self::L1 => l1_reg_grad(batch),
            Self::None => Array2::zeros((batch.n(), batch.d())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn satisfied_triplet_is_silent() {
        let a = array![[1.0, 0.0]];
        let n = array![[0.0, 1.0]];
        let out = triplet_loss(a.view(), a.view(), n.view(), 0.5);
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.active, 0);
        assert!(out.grad_anchors.iter().chain(&out.grad_negatives).all(|&g| g == 0.0));
    }

    #[test]
    fn violated_triplet_value() {
        let a = array![[1.0, 0.0]];
        let p = array![[0.0, 1.0]];
        let out = triplet_loss(a.view(), p.view(), a.view(), 0.2);
        assert!((out.loss - 2.2).abs() < 1e-15);
        assert_eq!(out.grad_anchors, array![[2.0, -2.0]]);
        assert_eq!(out.grad_positives, array![[-2.0, 2.0]]);
        assert_eq!(out.grad_negatives, array![[0.0, 0.0]]);
    }

    #[test]
    fn flops_gradient_by_hand() {
        let batch = ActivationBatch::new(array![[1.0, 0.0], [1.0, 2.0]]).unwrap();
        assert_eq!(flops_reg_grad(&batch), array![[1.0, 0.0], [1.0, 1.0]]);
        let zero = ActivationBatch::new(Array2::zeros((3, 2))).unwrap();
        assert!(flops_reg_grad(&zero).iter().all(|&g| g == 0.0));
        assert_eq!(l1_reg_grad(&batch), array![[0.5, 0.0], [0.5, 0.5]]);
    }

    #[test]
    fn mining_picks_valid_roles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = array![[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9], [0.7, 0.7]];
        let labels = [0, 0, 1, 1, 2];
        let triplets = mine_triplets(e.view(), &labels, &mut rng);
        // The singleton class has no positive.
        assert_eq!(triplets.len(), 4);
        for &(a, p, n) in &triplets {
            assert_ne!(a, p);
            assert_eq!(labels[a], labels[p]);
            assert_ne!(labels[a], labels[n]);
        }
        // Hardest negative of row 0 is the diagonal point.
        assert_eq!(triplets[0].2, 4);
    }
}
