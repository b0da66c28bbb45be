//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

use cc_core::{Matrix, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_softmax(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let logits = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0));
    let mut out = logits.clone();
    for r in 0..rows {
        let e: Vec<f64> = logits.row(r).iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for (c, v) in e.iter().enumerate() {
            out.set(r, c, v / s);
        }
    }
    out
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of `f` with respect to every entry of every input.
pub fn finite_differences(inputs: &[Matrix], f: &dyn Fn(&[Matrix]) -> f64) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Matrix::zeros(inputs[i].rows(), inputs[i].cols());
        for k in 0..inputs[i].len() {
            let orig = work[i].as_slice()[k];
            work[i].as_mut_slice()[k] = orig + FD_STEP;
            let up = f(&work);
            work[i].as_mut_slice()[k] = orig - FD_STEP;
            let down = f(&work);
            work[i].as_mut_slice()[k] = orig;
            g.as_mut_slice()[k] = (up - down) / (2.0 * FD_STEP);
        }
        out.push(g);
    }
    out
}

/// Builds `build(tape, leaves)` once for reverse mode and repeatedly for
/// finite differences; returns the worst relative error over all entries.
pub fn max_gradient_error(inputs: &[Matrix], build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let root = build(&mut tape, &leaves);
    let grads = tape.backward(root).expect("scalar root");
    let eval = |xs: &[Matrix]| {
        let mut t = Tape::new();
        let l: Vec<Var> = xs.iter().map(|m| t.leaf(m.clone())).collect();
        let r = build(&mut t, &l);
        t.scalar(r)
    };
    let numeric = finite_differences(inputs, &eval);
    let mut worst: f64 = 0.0;
    for (leaf, num) in leaves.iter().zip(&numeric) {
        let ana = grads.wrt(*leaf);
        for (a, n) in ana.as_slice().iter().zip(num.as_slice()) {
            worst = worst.max(relative_error(*a, *n));
        }
    }
    worst
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Literal double loop over the per-sample loss: for anchor `i` in view
/// `a`, the denominator sums `exp(s/τ)` over every `j` in both views, minus
/// the same-view `j = i` term when `exclude_self`.
pub fn naive_contrastive(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64, exclude_self: bool) -> f64 {
    let n = a.len();
    let one_side = |x: &[Vec<f64>], y: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            let numer = (cosine(&x[i], &y[i]) / tau).exp();
            let mut denom = 0.0;
            for j in 0..n {
                if !(exclude_self && j == i) {
                    denom += (cosine(&x[i], &x[j]) / tau).exp();
                }
                denom += (cosine(&x[i], &y[j]) / tau).exp();
            }
            total += -(numer / denom).ln();
        }
        total
    };
    (one_side(a, b) + one_side(b, a)) / (2 * n) as f64
}

pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn columns_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.cols())
        .map(|c| (0..m.rows()).map(|r| m.get(r, c)).collect())
        .collect()
}

/// `-Σ p log p` over both views, `p` being the column mass divided by N.
pub fn naive_entropy(ya: &Matrix, yb: &Matrix) -> f64 {
    let mut h = 0.0;
    for y in [ya, yb] {
        for col in columns_of(y) {
            let p = col.iter().sum::<f64>() / y.rows() as f64;
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
    }
    h
}

pub fn naive_cluster_loss(ya: &Matrix, yb: &Matrix, tau: f64, weight: f64) -> f64 {
    naive_contrastive(&columns_of(ya), &columns_of(yb), tau, true) - weight * naive_entropy(ya, yb)
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        let n = used.len();
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Best matched fraction over every injective map from cluster ids to class
/// ids, both assumed to lie in `0..k`.
pub fn brute_force_accuracy(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut best = 0;
    for perm in permutations(k) {
        let hits = pred
            .iter()
            .zip(truth)
            .filter(|(&p, &t)| perm[p] == t)
            .count();
        best = best.max(hits);
    }
    best as f64 / pred.len() as f64
}

pub fn brute_force_min_cost(cost: &Matrix) -> f64 {
    permutations(cost.rows())
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &j)| cost.get(i, j))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

fn choose2(n: f64) -> f64 {
    n * (n - 1.0) / 2.0
}

/// NMI (arithmetic normalization) and ARI straight from a hand-built
/// contingency table.
pub fn table_nmi_ari(table: &[Vec<f64>]) -> (f64, f64) {
    let n: f64 = table.iter().flatten().sum();
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let h = |m: &[f64]| -> f64 {
        m.iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).ln())
            .sum()
    };
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0.0 {
                mi += c / n * (c * n / (rows[i] * cols[j])).ln();
            }
        }
    }
    let nmi = mi / ((h(&rows) + h(&cols)) / 2.0);
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let a: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let b: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let expected = a * b / choose2(n);
    let ari = (index - expected) / ((a + b) / 2.0 - expected);
    (nmi, ari)
}
