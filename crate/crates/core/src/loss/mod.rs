//! Contrastive objectives: the instance-level loss over augmented samples and
//! the cluster-level loss over soft-assignment columns.

mod cluster;
mod instance;

pub use cluster::{
    assignment_entropy, cluster_columns, cluster_loss, cluster_loss_terms, cluster_loss_value,
    ClusterLossConfig, ClusterLossTerms,
};
pub use instance::{
    cosine_similarity_matrix, instance_loss, instance_loss_value, pair_similarity_stats,
    InstanceLossConfig, PairStats,
};

use crate::error::Result;
use crate::tape::{Tape, Var};

/// NT-Xent over the rows of `a` and `b`: row `i` of `a` and row `i` of `b`
/// form the positive pair, every other row of either view is a negative.
/// Returns the mean of the `2n` per-row losses.
///
/// Each view's rows are scored against `[own view; other view]`, so swapping
/// `a` and `b` reproduces the same value bit for bit.
pub(crate) fn nt_xent(
    tape: &mut Tape,
    a: Var,
    b: Var,
    temperature: f64,
    exclude_self: bool,
) -> Result<Var> {
    let n = tape.value(a).rows();
    let ua = tape.row_l2_normalize(a)?;
    let ub = tape.row_l2_normalize(b)?;
    let side_a = one_side(tape, ua, ub, temperature, exclude_self)?;
    let side_b = one_side(tape, ub, ua, temperature, exclude_self)?;
    let both = tape.add(side_a, side_b)?;
    Ok(tape.scale(both, 1.0 / (2 * n) as f64))
}

/// Summed per-row loss for anchors taken from `own`.
fn one_side(
    tape: &mut Tape,
    own: Var,
    other: Var,
    temperature: f64,
    exclude_self: bool,
) -> Result<Var> {
    let n = tape.value(own).rows();
    let joint = tape.concat_rows(own, other)?;
    let joint_t = tape.transpose(joint);
    let sim = tape.matmul(own, joint_t)?;
    let logits = tape.scale(sim, 1.0 / temperature);

    let excluded = exclude_self.then(|| {
        (0..n * 2 * n)
            .map(|k| k / (2 * n) == k % (2 * n))
            .collect::<Vec<bool>>()
    });
    let lse = tape.log_sum_exp_rows(logits, excluded)?;
    let pos = tape.gather(logits, (0..n).map(|i| (i, n + i)).collect())?;
    let per_row = tape.sub(lse, pos)?;
    Ok(tape.sum(per_row))
}
