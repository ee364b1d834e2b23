mod common;

use proptest::prelude::*;
use rand::Rng;
use sparse_embed::sparse::{rerank, DenseMatrix, InvertedIndex, SparseVec};

fn sparse_vec(dim: usize) -> impl Strategy<Value = SparseVec> {
    proptest::collection::vec(
        prop_oneof![3 => Just(0.0f32), 1 => -4.0f32..4.0, 1 => Just(1.0f32)],
        dim,
    )
    .prop_map(|v| SparseVec::from_dense(&v).unwrap())
}

fn database() -> impl Strategy<Value = (Vec<SparseVec>, SparseVec)> {
    (1usize..24).prop_flat_map(|d| {
        (proptest::collection::vec(sparse_vec(d), 0..40), sparse_vec(d))
    })
}

proptest! {
    #[test]
    fn spmv_equals_dense_oracle_bit_for_bit((rows, q) in database()) {
        let index = InvertedIndex::build(&rows, q.dim()).unwrap();
        let (scores, flops) = index.spmv(&q).unwrap();
        let expected = common::dense_scores(&rows, &q);
        prop_assert_eq!(scores.len(), rows.len());
        for (a, b) in scores.iter().zip(&expected) {
            prop_assert!(a == b, "{} vs {}", a, b);
        }
        prop_assert_eq!(flops, common::coincidences(&rows, &q));
    }

    #[test]
    fn query_matches_sorted_oracle((rows, q) in database(), threshold in -2.0f32..2.0, k in 0usize..50) {
        let index = InvertedIndex::build(&rows, q.dim()).unwrap();
        let result = index.query(&q, threshold, k).unwrap();
        let expected = common::oracle_topk(&common::dense_scores(&rows, &q), threshold, k);
        prop_assert_eq!(&result.candidates, &expected);
        for w in result.candidates.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
    }

    #[test]
    fn adding_a_row_never_lowers_flops((rows, q) in database(), extra in any::<u64>()) {
        let d = q.dim();
        let mut rng = common::rng(extra);
        let probs = vec![0.3; d];
        let before = InvertedIndex::build(&rows, d).unwrap().spmv(&q).unwrap().1;
        let mut more = rows.clone();
        let row = common::bernoulli_row(&mut rng, &probs);
        let added = common::coincidences(std::slice::from_ref(&row), &q);
        more.push(row);
        let after = InvertedIndex::build(&more, d).unwrap().spmv(&q).unwrap().1;
        prop_assert_eq!(after, before + added);
    }

    #[test]
    fn index_round_trips_rows((rows, q) in database()) {
        let index = InvertedIndex::build(&rows, q.dim()).unwrap();
        prop_assert_eq!(index.to_rows(), rows.clone());
        prop_assert_eq!(index.nnz(), rows.iter().map(SparseVec::nnz).sum::<usize>());
    }
}

#[test]
fn random_databases_match_dense_brute_force() {
    let stats = common::retrieval_exactness(90, 1000, 256, 1);
    assert_eq!(stats.cases, 90);
    assert_eq!(stats.bit_mismatches, 0);
    assert_eq!(stats.flops_mismatches, 0);
    assert_eq!(stats.topk_mismatches, 0);
}

#[test]
fn thousand_by_256_at_five_percent() {
    let mut rng = common::rng(2);
    let probs = vec![0.05; 256];
    let rows: Vec<SparseVec> = (0..1000).map(|_| common::bernoulli_row(&mut rng, &probs)).collect();
    let index = InvertedIndex::build(&rows, 256).unwrap();
    for _ in 0..20 {
        let q = common::bernoulli_row(&mut rng, &probs);
        let (scores, flops) = index.spmv(&q).unwrap();
        let expected = common::dense_scores(&rows, &q);
        for (a, b) in scores.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert_eq!(flops, common::coincidences(&rows, &q));
    }
}

#[test]
fn expected_flops_law() {
    let mut rng = common::rng(3);
    let probs: Vec<f64> = (0..128).map(|_| rng.random_range(0.01..0.3)).collect();
    let (measured, law) = common::flops_law(10_000, 1000, &probs, 4);
    assert!(common::rel_err(measured, law) < 0.05, "{measured} vs {law}");
}

#[test]
fn zero_query_costs_nothing() {
    let mut rng = common::rng(5);
    let rows: Vec<SparseVec> = (0..50).map(|_| common::bernoulli_row(&mut rng, &[0.5; 8])).collect();
    let index = InvertedIndex::build(&rows, 8).unwrap();
    let (scores, flops) = index.spmv(&SparseVec::zeros(8).unwrap()).unwrap();
    assert!(scores.iter().all(|&s| s == 0.0));
    assert_eq!(flops, 0);
}

#[test]
fn rerank_reorders_shortlist_by_dense_score() {
    let dense = DenseMatrix::new(4, 2, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8, 0.8, 0.6]).unwrap();
    let out = rerank(&[0, 1, 2, 3], &dense, &[0.0, 1.0], 2).unwrap();
    assert_eq!(out.iter().map(|c| c.0).collect::<Vec<_>>(), vec![1, 2]);
}
