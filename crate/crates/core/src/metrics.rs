//! Clustering quality: NMI, accuracy under optimal matching, and ARI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// NMI, ACC and ARI of one labelling against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub nmi: f64,
    pub acc: f64,
    pub ari: f64,
}

impl MetricBundle {
    pub fn compute(pred: &[usize], truth: &[usize]) -> Result<Self> {
        Ok(MetricBundle {
            nmi: nmi(pred, truth)?,
            acc: clustering_accuracy(pred, truth)?,
            ari: ari(pred, truth)?,
        })
    }
}

/// Cross-tabulation of predicted clusters (rows) against true classes
/// (columns). Labels are compacted to `0..K` in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_totals: Vec<u64>,
    pub col_totals: Vec<u64>,
    pub total: u64,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut uniq = labels.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let ids = labels
        .iter()
        .map(|l| uniq.binary_search(l).expect("label present"))
        .collect();
    (ids, uniq.len())
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::contract(format!(
                "label length mismatch: {} predicted vs {} true",
                pred.len(),
                truth.len()
            )));
        }
        let (p, kp) = compact(pred);
        let (t, kt) = compact(truth);
        let mut counts = vec![vec![0u64; kt]; kp];
        for (&i, &j) in p.iter().zip(&t) {
            counts[i][j] += 1;
        }
        let row_totals = counts.iter().map(|r| r.iter().sum()).collect();
        let col_totals = (0..kt).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(ContingencyTable {
            counts,
            row_totals,
            col_totals,
            total: pred.len() as u64,
        })
    }
}

// Terms are summed in sorted order so relabelling either partition gives a
// bitwise identical result.
fn entropy(marginals: &[u64], n: f64) -> f64 {
    let mut sorted = marginals.to_vec();
    sorted.sort_unstable();
    sorted
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two
/// entropies. Two single-cluster partitions score 1.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    if t.total == 0 {
        return Err(Error::contract("NMI needs at least one label"));
    }
    let n = t.total as f64;
    let hp = entropy(&t.row_totals, n);
    let ht = entropy(&t.col_totals, n);
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0);
    }
    let mut cells: Vec<(u64, u64, u64)> = Vec::new();
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                cells.push((c, t.row_totals[i], t.col_totals[j]));
            }
        }
    }
    cells.sort_unstable();
    let mi: f64 = cells
        .iter()
        .map(|&(c, a, b)| {
            let c = c as f64;
            c / n * (c * n / (a as f64 * b as f64)).ln()
        })
        .sum();
    Ok((mi / ((hp + ht) / 2.0)).clamp(0.0, 1.0))
}

/// Fraction of samples correctly labelled under the best one-to-one mapping
/// from clusters to classes. The contingency table is zero-padded to square
/// and matched with [`hungarian`].
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    if t.total == 0 {
        return Err(Error::contract("accuracy needs at least one label"));
    }
    let k = t.counts.len().max(t.col_totals.len());
    let max = t.counts.iter().flatten().copied().max().unwrap_or(0) as f64;
    let cost = Matrix::from_fn(k, k, |i, j| {
        let c = t.counts.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0) as f64;
        max - c
    });
    let assignment = hungarian(&cost)?;
    let matched: u64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| t.counts.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0))
        .sum();
    Ok(matched as f64 / t.total as f64)
}

fn pairs(n: u64) -> i128 {
    let n = n as i128;
    n * (n - 1) / 2
}

/// Adjusted Rand index. Pair counts are exact integers; only the final ratio
/// is floating point.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    if t.total < 2 {
        return Err(Error::contract(format!(
            "ARI needs at least 2 labels, got {}",
            t.total
        )));
    }
    let index: i128 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: i128 = t.row_totals.iter().map(|&c| pairs(c)).sum();
    let b: i128 = t.col_totals.iter().map(|&c| pairs(c)).sum();
    let total = pairs(t.total);
    // (index - a b / T) / ((a + b) / 2 - a b / T), scaled by 2T
    let num = 2 * total * index - 2 * a * b;
    let den = total * (a + b) - 2 * a * b;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Minimum-cost perfect matching on a square cost matrix. Returns, for each
/// row, the column it is assigned to.
pub fn hungarian(cost: &Matrix) -> Result<Vec<usize>> {
    let (n, m) = cost.shape();
    if n != m {
        return Err(Error::contract(format!(
            "hungarian needs a square matrix, got {n}x{m}"
        )));
    }
    if !cost.is_finite() {
        return Err(Error::contract("hungarian needs finite costs"));
    }
    if n == 0 {
        return Ok(vec![]);
    }
    // Shortest augmenting paths with row/column potentials; index 0 is a
    // sentinel column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col] = true;
            let r = owner[col];
            let mut delta = f64::INFINITY;
            let mut next = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost.get(r - 1, j - 1) - u[r] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = col;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    next = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            col = next;
            if owner[col] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col];
            owner[col] = owner[prev];
            col = prev;
            if col == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_partitions_score_one() {
        let a = [0, 0, 1, 1, 2, 2, 2];
        assert_eq!(nmi(&a, &a).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&a, &a).unwrap(), 1.0);
        assert_eq!(ari(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn relabelled_partitions_score_one() {
        let truth = [0, 0, 1, 1, 2, 2, 3];
        let pred = [5, 5, 2, 2, 9, 9, 0];
        let m = MetricBundle::compute(&pred, &truth).unwrap();
        assert!((m.nmi - 1.0).abs() < 1e-12);
        assert_eq!(m.acc, 1.0);
        assert_eq!(m.ari, 1.0);
    }

    #[test]
    fn constant_prediction() {
        let truth = [0, 0, 1, 1];
        let pred = [0, 0, 0, 0];
        assert_eq!(nmi(&pred, &truth).unwrap(), 0.0);
        assert_eq!(clustering_accuracy(&pred, &truth).unwrap(), 0.5);
        assert_eq!(ari(&pred, &truth).unwrap(), 0.0);
    }

    #[test]
    fn both_trivial_nmi_is_one() {
        assert_eq!(nmi(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        assert!(matches!(nmi(&[0, 1], &[0]), Err(Error::Contract(_))));
        assert!(matches!(
            clustering_accuracy(&[0, 1], &[0]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(ari(&[0, 1], &[0]), Err(Error::Contract(_))));
        assert!(matches!(ari(&[0], &[0]), Err(Error::Contract(_))));
    }

    #[test]
    fn hungarian_small_cases() {
        let diag = Matrix::from_rows(&[[0.0, 5.0, 5.0], [5.0, 0.0, 5.0], [5.0, 5.0, 0.0]]).unwrap();
        assert_eq!(hungarian(&diag).unwrap(), vec![0, 1, 2]);
        let c = Matrix::from_rows(&[[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]]).unwrap();
        let a = hungarian(&c).unwrap();
        let total: f64 = a.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum();
        assert_eq!(total, 5.0);
        let shifted = Matrix::from_fn(3, 3, |i, j| c.get(i, j) + [10.0, -3.0, 7.5][i]);
        assert_eq!(hungarian(&shifted).unwrap(), a);
        assert!(hungarian(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn contingency_marginals() {
        let t = ContingencyTable::new(&[0, 0, 1, 1, 2, 2], &[0, 0, 0, 1, 1, 1]).unwrap();
        assert_eq!(t.counts, vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(t.row_totals, vec![2, 2, 2]);
        assert_eq!(t.col_totals, vec![3, 3]);
        assert_eq!(t.total, 6);
    }
}
