//! Redundancy-reduction contrastive loss: standardizes two views' node
//! embeddings per dimension, cross-correlates them over the node batch, and
//! penalizes distance from the identity matrix.

use crate::autodiff::{AutodiffError, Tape, Tensor, TensorId};

/// Columns whose batch variance falls below this are skipped (and logged);
/// their correlations are undefined.
const VARIANCE_FLOOR: f64 = 1e-12;

fn standardize_columns(
    tape: &mut Tape,
    z: TensorId,
    keep: &[usize],
) -> Result<TensorId, AutodiffError> {
    let kept = tape.gather_cols(z, keep)?;
    let mu = tape.mean_axis0(kept)?;
    let centered = tape.sub_row(kept, mu)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean_axis0(sq)?;
    let std = tape.sqrt(var);
    tape.div_row(centered, std)
}

/// Barlow Twins objective between two embedding views of the same node set:
/// sum_i (1 - C_ii)^2 + w * sum_{i != j} C_ij^2, with C the per-dimension
/// cross-correlation over the batch (node) axis.
pub fn barlow_twins_loss(
    tape: &mut Tape,
    z_a: TensorId,
    z_b: TensorId,
    w: f64,
) -> Result<TensorId, AutodiffError> {
    let (sa, sb) = (tape.value(z_a).shape().to_vec(), tape.value(z_b).shape().to_vec());
    if sa != sb || sa.len() != 2 {
        return Err(AutodiffError::ShapeMismatch { op: "barlow_twins", lhs: sa, rhs: sb });
    }
    let (batch, dims) = (sa[0], sa[1]);
    if batch < 2 {
        return Err(AutodiffError::BadInput {
            op: "barlow_twins",
            detail: format!("batch dimension must be >= 2, got {batch}"),
        });
    }

    // Degenerate (zero-variance) columns in either view are excluded.
    let col_variance = |t: &Tensor| -> Vec<f64> {
        let mut means = vec![0.0; dims];
        for r in 0..batch {
            for c in 0..dims {
                means[c] += t.at(r, c);
            }
        }
        for m in &mut means {
            *m /= batch as f64;
        }
        let mut vars = vec![0.0; dims];
        for r in 0..batch {
            for c in 0..dims {
                let d = t.at(r, c) - means[c];
                vars[c] += d * d;
            }
        }
        for v in &mut vars {
            *v /= batch as f64;
        }
        vars
    };
    let va = col_variance(tape.value(z_a));
    let vb = col_variance(tape.value(z_b));
    let keep: Vec<usize> = (0..dims)
        .filter(|&c| va[c] > VARIANCE_FLOOR && vb[c] > VARIANCE_FLOOR)
        .collect();
    if keep.len() < dims {
        log::warn!(
            "barlow_twins: skipping {} zero-variance column(s) of {dims}",
            dims - keep.len()
        );
    }
    if keep.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }

    let a = standardize_columns(tape, z_a, &keep)?;
    let b = standardize_columns(tape, z_b, &keep)?;
    let at = tape.transpose(a)?;
    let prod = tape.matmul(at, b)?;
    let corr = tape.scale(prod, 1.0 / batch as f64);

    let d = keep.len();
    let mut diag = vec![0.0; d * d];
    let mut off = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            if i == j {
                diag[i * d + j] = 1.0;
            } else {
                off[i * d + j] = 1.0;
            }
        }
    }
    let diag_mask = tape.constant(Tensor::matrix(d, d, diag));
    let off_mask = tape.constant(Tensor::matrix(d, d, off));

    // Invariance term: sum over the diagonal of (1 - C)^2.
    let one_minus = {
        let n = tape.neg(corr);
        tape.add_const(n, 1.0)
    };
    let inv_sq = tape.mul(one_minus, one_minus)?;
    let inv_masked = tape.mul(inv_sq, diag_mask)?;
    let invariance = tape.sum(inv_masked);

    // Redundancy term: sum over off-diagonal C^2.
    let corr_sq = tape.mul(corr, corr)?;
    let red_masked = tape.mul(corr_sq, off_mask)?;
    let redundancy = tape.sum(red_masked);
    let weighted = tape.scale(redundancy, w);

    tape.add(invariance, weighted)
}
