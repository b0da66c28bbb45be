mod common;

use cc_core::metrics::{ari, clustering_accuracy, hungarian, nmi, MetricBundle};
use cc_core::Matrix;
use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn table_of(pred: &[usize], truth: &[usize]) -> Vec<Vec<f64>> {
    let kp = pred.iter().max().unwrap() + 1;
    let kt = truth.iter().max().unwrap() + 1;
    let mut t = vec![vec![0.0; kt]; kp];
    for (&p, &c) in pred.iter().zip(truth) {
        t[p][c] += 1.0;
    }
    t.retain(|row| row.iter().any(|&c| c > 0.0));
    t
}

/// Hand-built contingency tables, rows are predicted clusters.
fn fixtures() -> Vec<(&'static str, Vec<usize>, Vec<usize>)> {
    vec![
        (
            "three into two",
            vec![0, 0, 1, 1, 2, 2],
            vec![0, 0, 0, 1, 1, 1],
        ),
        ("crossed pairs", vec![0, 0, 1, 1], vec![0, 1, 0, 1]),
        (
            "one stray",
            vec![0, 0, 0, 1, 1, 1, 1],
            vec![0, 0, 0, 0, 1, 1, 1],
        ),
        (
            "merge",
            vec![0, 0, 0, 0, 0, 1, 1, 1],
            vec![0, 0, 1, 1, 1, 2, 2, 2],
        ),
        (
            "unbalanced",
            vec![0, 1, 1, 2, 2, 2, 3, 3, 3, 3, 0, 1],
            vec![0, 0, 1, 1, 1, 2, 2, 2, 2, 2, 1, 0],
        ),
        ("split", vec![0, 1, 2, 3, 4, 5], vec![0, 0, 0, 1, 1, 1]),
    ]
}

#[test]
fn nmi_and_ari_match_contingency_fixtures() {
    for (name, pred, truth) in fixtures() {
        let (want_nmi, want_ari) = table_nmi_ari(&table_of(&pred, &truth));
        let got_nmi = nmi(&pred, &truth).unwrap();
        let got_ari = ari(&pred, &truth).unwrap();
        assert!(
            (got_nmi - want_nmi).abs() < 1e-12,
            "{name}: nmi {got_nmi} vs {want_nmi}"
        );
        assert!(
            (got_ari - want_ari).abs() < 1e-12,
            "{name}: ari {got_ari} vs {want_ari}"
        );
    }
}

#[test]
fn crossed_pairs_by_hand() {
    // no pair agrees; expected index 2/3, max index 2
    assert!((ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-15);
    assert_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
}

#[test]
fn three_into_two_by_hand() {
    // I = (2/3) ln 2, H(pred) = ln 3, H(truth) = ln 2
    let l2 = 2f64.ln();
    let want = (2.0 / 3.0 * l2) / ((3f64.ln() + l2) / 2.0);
    assert!((nmi(&[0, 0, 1, 1, 2, 2], &[0, 0, 0, 1, 1, 1]).unwrap() - want).abs() < 1e-12);
}

#[test]
fn accuracy_matches_brute_force() {
    for seed in 0..200u64 {
        let mut r = rng(seed);
        let k = r.random_range(1..=6);
        let n = r.random_range(1..=40);
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        assert_eq!(
            clustering_accuracy(&pred, &truth).unwrap(),
            brute_force_accuracy(&pred, &truth, k),
            "seed {seed}"
        );
    }
}

#[test]
fn forty_samples_five_clusters() {
    let mut r = rng(40);
    let pred: Vec<usize> = (0..40).map(|_| r.random_range(0..5)).collect();
    let truth: Vec<usize> = (0..40).map(|_| r.random_range(0..5)).collect();
    assert_eq!(
        clustering_accuracy(&pred, &truth).unwrap(),
        brute_force_accuracy(&pred, &truth, 5)
    );
}

#[test]
fn hungarian_cost_is_minimal() {
    for seed in 0..200u64 {
        let mut r = rng(seed);
        let n = r.random_range(1..=7);
        let cost = Matrix::from_fn(n, n, |_, _| r.random_range(0..20) as f64);
        let assign = hungarian(&cost).unwrap();
        let mut seen = vec![false; n];
        for &c in &assign {
            assert!(!seen[c]);
            seen[c] = true;
        }
        let total: f64 = assign
            .iter()
            .enumerate()
            .map(|(i, &j)| cost.get(i, j))
            .sum();
        assert_eq!(total, brute_force_min_cost(&cost), "seed {seed}");
    }
}

#[test]
fn hungarian_ignores_row_offsets() {
    let mut r = rng(5);
    let cost = Matrix::from_fn(5, 5, |_, _| r.random_range(0.0..1.0));
    let shifted = Matrix::from_fn(5, 5, |i, j| cost.get(i, j) + 10.0 * i as f64);
    assert_eq!(hungarian(&cost).unwrap(), hungarian(&shifted).unwrap());
}

#[test]
fn independent_partitions_have_ari_near_zero() {
    let mut r = rng(2024);
    let trials = 100;
    let mut sum = 0.0;
    for _ in 0..trials {
        let a: Vec<usize> = (0..1000).map(|_| r.random_range(0..4)).collect();
        let b: Vec<usize> = (0..1000).map(|_| r.random_range(0..4)).collect();
        sum += ari(&a, &b).unwrap();
    }
    let mean = sum / trials as f64;
    assert!(mean.abs() <= 0.02, "mean ARI {mean}");
}

#[test]
fn bundle_on_permuted_truth_is_perfect() {
    let truth: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let pred: Vec<usize> = truth.iter().map(|&t| [2, 0, 3, 1][t]).collect();
    let m = MetricBundle::compute(&pred, &truth).unwrap();
    assert_eq!((m.nmi, m.acc, m.ari), (1.0, 1.0, 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabeling_changes_nothing(seed in any::<u64>(), n in 2usize..60, k in 1usize..7) {
        let mut r = rng(seed);
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let mut pp: Vec<usize> = (0..k).collect();
        let mut pt: Vec<usize> = (0..k).collect();
        pp.shuffle(&mut r);
        pt.shuffle(&mut r);
        let pred2: Vec<usize> = pred.iter().map(|&p| pp[p]).collect();
        let truth2: Vec<usize> = truth.iter().map(|&t| pt[t]).collect();
        let a = MetricBundle::compute(&pred, &truth).unwrap();
        let b = MetricBundle::compute(&pred2, &truth2).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn metrics_stay_in_range(seed in any::<u64>(), n in 2usize..60, k in 1usize..7) {
        let mut r = rng(seed);
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let m = MetricBundle::compute(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.nmi));
        prop_assert!((0.0..=1.0).contains(&m.acc));
        prop_assert!(m.ari <= 1.0);
    }
}
