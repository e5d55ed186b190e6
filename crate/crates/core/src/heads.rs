//! Judgment and fact decoders with their cross-entropy losses.

use crate::autodiff::{Tape, Var};
use crate::tensor::{Result, TensorError};

/// Probability floor inside every logarithm, so losses stay finite.
pub const PROB_FLOOR: f64 = 1e-12;

/// Judgment logits `C W^c + b^c` for claim rows `[k × 2h]`, with
/// `W^c [2h × 3]` and `b^c [1 × 3]`. Returns `(logits, probabilities)`.
pub fn predict_judgment(tape: &mut Tape, claims: Var, weight: Var, bias: Var) -> Result<(Var, Var)> {
    let logits = tape.matmul(claims, weight)?;
    let logits = tape.add_row(logits, bias)?;
    let probs = tape.softmax(logits)?;
    Ok((logits, probs))
}

/// `−(1/k) Σ_j Σ_d g_jd ln y_jd` over the first `targets.len()` rows of
/// `probs`; any further rows are padding and do not contribute.
pub fn claim_loss(tape: &mut Tape, probs: Var, targets: &[Vec<f64>]) -> Result<Var> {
    let [rows, classes] = *tape.shape(probs) else {
        return Err(TensorError::Contract("claim probabilities must be a matrix".into()));
    };
    let k = targets.len();
    if k == 0 || k > rows {
        return Err(TensorError::Contract(format!("{k} targets for {rows} claim rows")));
    }
    let mut weights = vec![0.0; rows * classes];
    for (j, row) in targets.iter().enumerate() {
        let one_hot = row.len() == classes
            && row.iter().all(|&v| v == 0.0 || v == 1.0)
            && row.iter().filter(|&&v| v == 1.0).count() == 1;
        if !one_hot {
            return Err(TensorError::Contract(format!("target row {j} is not one-hot: {row:?}")));
        }
        weights[j * classes..(j + 1) * classes].copy_from_slice(row);
    }
    let logs = tape.log_clamped(probs, PROB_FLOOR);
    let picked = tape.mul_const(logs, weights)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / k as f64))
}

/// Per-label fact probabilities `y_p = σ(W_p · f_p + b_p)` for fact rows
/// `[z × 2h]`, with `W [z × 2h]` and `b [z × 1]`. Returns `(logits, probs)`,
/// both `[z × 1]`.
pub fn predict_facts(tape: &mut Tape, facts: Var, weight: Var, bias: Var) -> Result<(Var, Var)> {
    let prod = tape.mul(facts, weight)?;
    let dots = tape.sum_cols(prod);
    let logits = tape.add(dots, bias)?;
    let probs = tape.sigmoid(logits);
    Ok((logits, probs))
}

/// Mean binary cross-entropy over the fact labels.
pub fn fact_loss(tape: &mut Tape, probs: Var, targets: &[bool]) -> Result<Var> {
    let z = tape.value(probs).numel();
    if targets.len() != z {
        return Err(TensorError::Contract(format!(
            "{} fact targets for {z} probabilities",
            targets.len()
        )));
    }
    let pos: Vec<f64> = targets.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    let neg: Vec<f64> = pos.iter().map(|g| 1.0 - g).collect();
    let log_y = tape.log_clamped(probs, PROB_FLOOR);
    let complement = tape.affine(probs, -1.0, 1.0);
    let log_not_y = tape.log_clamped(complement, PROB_FLOOR);
    let a = tape.mul_const(log_y, pos)?;
    let b = tape.mul_const(log_not_y, neg)?;
    let both = tape.add(a, b)?;
    let total = tape.sum(both);
    Ok(tape.scale(total, -1.0 / z as f64))
}

/// `L_c + w · L_f`; with `w == 1` this is the plain sum.
pub fn total_loss(tape: &mut Tape, claim: Var, fact: Option<Var>, fact_weight: f64) -> Result<Var> {
    match fact {
        None => Ok(claim),
        Some(f) if fact_weight == 1.0 => tape.add(claim, f),
        Some(f) => {
            let weighted = tape.scale(f, fact_weight);
            tape.add(claim, weighted)
        }
    }
}
