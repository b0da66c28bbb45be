use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

/// Floor applied inside `log` so that `0 · log 0` evaluates to 0.
const LOG_FLOOR: f64 = 1e-12;
const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Settings for the cluster-level contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterLossConfig {
    pub temperature: f64,
    pub entropy_weight: f64,
    pub exclude_self_similarity: bool,
    /// Add `Σ p log p` instead of subtracting the entropy `-Σ p log p`.
    /// The default subtracts the entropy, so minimizing the loss spreads
    /// mass across clusters; the literal sign rewards collapse.
    pub literal_entropy_sign: bool,
}

impl Default for ClusterLossConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            entropy_weight: 1.0,
            exclude_self_similarity: true,
            literal_entropy_sign: false,
        }
    }
}

impl ClusterLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(
                "cluster_loss.temperature",
                format!("must be positive, got {}", self.temperature),
            ));
        }
        if !self.entropy_weight.is_finite() {
            return Err(Error::invalid(
                "cluster_loss.entropy_weight",
                "must be finite",
            ));
        }
        Ok(())
    }
}

/// Columns of a soft-assignment matrix: entry `i` holds every sample's
/// membership mass for cluster `i`.
pub fn cluster_columns(y: &Matrix) -> Vec<Vec<f64>> {
    (0..y.cols()).map(|c| y.column(c)).collect()
}

fn check_row_stochastic(y: &Matrix, view: &str) -> Result<()> {
    for r in 0..y.rows() {
        let s: f64 = y.row(r).iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE || y.row(r).iter().any(|&v| v < 0.0) {
            return Err(Error::contract(format!(
                "row {r} of view {view} is not a probability vector (sum {s})"
            )));
        }
    }
    Ok(())
}

fn check_views(ya: &Matrix, yb: &Matrix, op: &'static str) -> Result<()> {
    if ya.shape() != yb.shape() {
        return Err(Error::Dimension {
            op,
            left: ya.shape(),
            right: yb.shape(),
        });
    }
    if ya.rows() == 0 {
        return Err(Error::DegenerateBatch("empty batch".into()));
    }
    check_row_stochastic(ya, "a")?;
    check_row_stochastic(yb, "b")
}

fn view_entropy(tape: &mut Tape, y: Var) -> Var {
    let n = tape.value(y).rows() as f64;
    let mass = tape.column_sums(y);
    let p = tape.scale(mass, 1.0 / n);
    let log_p = tape.log(p, LOG_FLOOR);
    let plogp = tape.mul(p, log_p).expect("same shape");
    let s = tape.sum(plogp);
    tape.scale(s, -1.0)
}

/// Sum over both views of the entropy of the per-view cluster mass
/// distribution `p_i = (Σ_j Y_ji) / N`.
pub fn assignment_entropy(tape: &mut Tape, ya: Var, yb: Var) -> Result<Var> {
    check_views(tape.value(ya), tape.value(yb), "assignment_entropy")?;
    let ha = view_entropy(tape, ya);
    let hb = view_entropy(tape, yb);
    tape.add(ha, hb)
}

/// Terms of the cluster-level loss, all recorded on the same tape.
#[derive(Debug, Clone, Copy)]
pub struct ClusterLossTerms {
    pub contrastive: Var,
    pub entropy: Var,
    pub total: Var,
}

/// Cluster-level contrastive loss of two `N × M` soft-assignment views,
/// minus the weighted assignment entropy.
pub fn cluster_loss(tape: &mut Tape, ya: Var, yb: Var, config: &ClusterLossConfig) -> Result<Var> {
    cluster_loss_terms(tape, ya, yb, config).map(|t| t.total)
}

pub fn cluster_loss_terms(
    tape: &mut Tape,
    ya: Var,
    yb: Var,
    config: &ClusterLossConfig,
) -> Result<ClusterLossTerms> {
    config.validate()?;
    check_views(tape.value(ya), tape.value(yb), "cluster_loss")?;
    let m = tape.value(ya).cols();
    if m < 2 {
        return Err(Error::contract(format!(
            "cluster loss needs at least 2 clusters, got {m}"
        )));
    }
    for y in [ya, yb] {
        if let Some(c) = tape
            .value(y)
            .column_sums()
            .as_slice()
            .iter()
            .position(|&s| s <= 0.0)
        {
            return Err(Error::Degenerate {
                op: "cluster_loss",
                what: "cluster",
                index: c,
            });
        }
    }

    let ca = tape.transpose(ya);
    let cb = tape.transpose(yb);
    let contrastive = super::nt_xent(
        tape,
        ca,
        cb,
        config.temperature,
        config.exclude_self_similarity,
    )?;
    let entropy = assignment_entropy(tape, ya, yb)?;
    let sign = if config.literal_entropy_sign {
        1.0
    } else {
        -1.0
    };
    let weighted = tape.scale(entropy, sign * config.entropy_weight);
    let total = tape.add(contrastive, weighted)?;
    Ok(ClusterLossTerms {
        contrastive,
        entropy,
        total,
    })
}

/// Value-only form of [`cluster_loss`].
pub fn cluster_loss_value(ya: &Matrix, yb: &Matrix, config: &ClusterLossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.leaf(ya.clone());
    let b = tape.leaf(yb.clone());
    let l = cluster_loss(&mut tape, a, b, config)?;
    Ok(tape.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_soft(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0)).softmax_rows()
    }

    fn entropy_value(ya: &Matrix, yb: &Matrix) -> Result<f64> {
        let mut t = Tape::new();
        let a = t.leaf(ya.clone());
        let b = t.leaf(yb.clone());
        let h = assignment_entropy(&mut t, a, b)?;
        Ok(t.scalar(h))
    }

    #[test]
    fn columns_of_one_hot_rows_are_disjoint() {
        let y = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        let cols = cluster_columns(&y);
        assert_eq!(cols, vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]);
    }

    #[test]
    fn columns_of_uniform_rows() {
        let y = Matrix::filled(5, 4, 0.25);
        assert!(cluster_columns(&y)
            .iter()
            .all(|c| c.iter().all(|&v| v == 0.25)));
    }

    #[test]
    fn columns_are_transpose() {
        let y = random_soft(6, 3, 4);
        let t = y.transpose();
        for (i, c) in cluster_columns(&y).iter().enumerate() {
            assert_eq!(c.as_slice(), t.row(i));
        }
    }

    #[test]
    fn entropy_uniform_and_collapsed() {
        let u = Matrix::filled(8, 4, 0.25);
        assert!((entropy_value(&u, &u).unwrap() - 2.0 * 4f64.ln()).abs() < 1e-12);
        let one = Matrix::from_fn(8, 4, |_, c| if c == 2 { 1.0 } else { 0.0 });
        assert_eq!(entropy_value(&one, &one).unwrap(), 0.0);
    }

    #[test]
    fn entropy_matches_direct_sum() {
        let ya = random_soft(16, 4, 1);
        let yb = random_soft(16, 4, 2);
        let mut expected = 0.0;
        for y in [&ya, &yb] {
            for c in 0..4 {
                let p = y.column(c).iter().sum::<f64>() / 16.0;
                expected -= p * p.ln();
            }
        }
        assert!((entropy_value(&ya, &yb).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_unnormalized_rows() {
        let y = Matrix::filled(3, 2, 0.6);
        assert!(matches!(entropy_value(&y, &y), Err(Error::Contract(_))));
    }

    #[test]
    fn two_cluster_hand_value() {
        // identical views with orthogonal one-hot columns, balanced
        let y = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let cfg = ClusterLossConfig::default();
        let mut t = Tape::new();
        let a = t.leaf(y.clone());
        let b = t.leaf(y.clone());
        let terms = cluster_loss_terms(&mut t, a, b, &cfg).unwrap();
        let e1 = 1f64.exp();
        let contrastive = -(e1 / (e1 + 2.0)).ln();
        assert!((t.scalar(terms.contrastive) - contrastive).abs() < 1e-12);
        assert!((t.scalar(terms.entropy) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((t.scalar(terms.total) - (contrastive - 2.0 * 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn literal_sign_adds_entropy() {
        let ya = random_soft(10, 3, 5);
        let yb = random_soft(10, 3, 6);
        let lit = ClusterLossConfig {
            literal_entropy_sign: true,
            ..Default::default()
        };
        let h = entropy_value(&ya, &yb).unwrap();
        let d = cluster_loss_value(&ya, &yb, &lit).unwrap()
            - cluster_loss_value(&ya, &yb, &ClusterLossConfig::default()).unwrap();
        assert!((d - 2.0 * h).abs() < 1e-12);
    }

    #[test]
    fn empty_cluster_is_named() {
        let y = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        match cluster_loss_value(&y, &y, &ClusterLossConfig::default()) {
            Err(Error::Degenerate { index, what, .. }) => {
                assert_eq!(index, 2);
                assert_eq!(what, "cluster");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
