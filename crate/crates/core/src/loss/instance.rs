use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

/// Settings for the instance-level contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceLossConfig {
    pub temperature: f64,
    /// Drop the constant `exp(1/τ)` self-similarity term from each
    /// denominator. `false` keeps it, which follows the formula as printed.
    pub exclude_self_similarity: bool,
}

impl Default for InstanceLossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            exclude_self_similarity: true,
        }
    }
}

impl InstanceLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(
                "instance_loss.temperature",
                format!("must be positive, got {}", self.temperature),
            ));
        }
        Ok(())
    }
}

/// Cosine similarity of every row of `a` against every row of `b`.
pub fn cosine_similarity_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::Dimension {
            op: "cosine_similarity_matrix",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let a = a.row_l2_normalize()?;
    let b = b.row_l2_normalize()?;
    Ok(a.matmul(&b.transpose())?.map(|v| v.clamp(-1.0, 1.0)))
}

/// Instance-level contrastive loss of two `N × d` views, recorded on `tape`.
pub fn instance_loss(
    tape: &mut Tape,
    za: Var,
    zb: Var,
    config: &InstanceLossConfig,
) -> Result<Var> {
    config.validate()?;
    let (a, b) = (tape.value(za).shape(), tape.value(zb).shape());
    if a != b {
        return Err(Error::Dimension {
            op: "instance_loss",
            left: a,
            right: b,
        });
    }
    if config.exclude_self_similarity && a.0 < 2 {
        return Err(Error::DegenerateBatch(format!(
            "instance loss needs at least 2 samples with self-exclusion, got {}",
            a.0
        )));
    }
    if a.0 == 0 {
        return Err(Error::DegenerateBatch("empty batch".into()));
    }
    super::nt_xent(
        tape,
        za,
        zb,
        config.temperature,
        config.exclude_self_similarity,
    )
}

/// Value-only form of [`instance_loss`].
pub fn instance_loss_value(za: &Matrix, zb: &Matrix, config: &InstanceLossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.leaf(za.clone());
    let b = tape.leaf(zb.clone());
    let l = instance_loss(&mut tape, a, b, config)?;
    Ok(tape.scalar(l))
}

/// Mean cosine similarity of positive pairs and of negative pairs among the
/// `2N` rows of two views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub positive: f64,
    pub negative: f64,
}

pub fn pair_similarity_stats(a: &Matrix, b: &Matrix) -> Result<PairStats> {
    let joint = a.concat_rows(b)?;
    let s = cosine_similarity_matrix(&joint, &joint)?;
    let n = a.rows();
    let m = 2 * n;
    let (mut pos, mut neg) = (0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            if j == (i + n) % m {
                pos += s.get(i, j);
            } else {
                neg += s.get(i, j);
            }
        }
    }
    let neg_count = m * (m - 2);
    Ok(PairStats {
        positive: pos / m as f64,
        negative: if neg_count == 0 {
            0.0
        } else {
            neg / neg_count as f64
        },
    })
}
