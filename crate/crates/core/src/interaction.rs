//! Claim refinement against the utterance memory and the fact memory.
//!
//! Per hop, every claim vector attends over the utterance memory and over
//! the probability-scaled fact memory; a sigmoid gate mixes the two reads,
//! a ReLU projection of the claim is added, and a residual self-attention
//! across the case's claims follows. Hops reuse the same parameters and the
//! memories stay fixed; only the claim matrix changes between hops.

use crate::autodiff::{Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Tape handles for gate and fusion parameters. A gate weight is `None`
/// when its memory pathway is ablated.
#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub gate_utterance: Option<Var>,
    pub gate_fact: Option<Var>,
    pub gate_bias: Option<Var>,
    pub fusion_weight: Var,
    pub fusion_bias: Var,
}

/// Which pathways a hop runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopFlags {
    pub utterance_memory: bool,
    pub fact_memory: bool,
    pub self_attention: bool,
}

/// Attention handles recorded for one hop.
#[derive(Debug, Clone, Copy)]
pub struct HopRecord {
    pub debate_to_claim: Option<Var>,
    pub fact_to_claim: Option<Var>,
    pub across_claim: Option<Var>,
    pub gate: Option<Var>,
}

fn repeat_mask(rows: usize, cols_mask: &[bool]) -> Vec<bool> {
    (0..rows).flat_map(|_| cols_mask.iter().copied()).collect()
}

/// Dot-product attention of each query row over the memory rows:
/// `α = softmax_i(q · m_i)`, `out = Σ α_i m_i`.
fn attend(tape: &mut Tape, queries: Var, memory: Var, memory_mask: Option<&[bool]>) -> Result<(Var, Var)> {
    let width_q = tape.shape(queries)[1];
    let width_m = tape.shape(memory)[1];
    if width_q != width_m {
        return Err(TensorError::Shape {
            op: "attend",
            left: tape.shape(queries).to_vec(),
            right: tape.shape(memory).to_vec(),
        });
    }
    let rows = tape.shape(queries)[0];
    let mem_t = tape.transpose(memory)?;
    let logits = tape.matmul(queries, mem_t)?;
    let mask = memory_mask.map(|m| repeat_mask(rows, m));
    let alpha = tape.masked_softmax(logits, mask.as_deref())?;
    let out = tape.matmul(alpha, memory)?;
    Ok((out, alpha))
}

/// Claims `[k × 2h]` read the utterance memory `[n × 2h]`.
/// Returns `(O^u [k × 2h], α^d [k × n])`.
pub fn debate_to_claim(tape: &mut Tape, claims: Var, utterance_memory: Var, mask: &[bool]) -> Result<(Var, Var)> {
    attend(tape, claims, utterance_memory, Some(mask))
}

/// One learned query per fact label reads the utterance memory.
/// Returns `(f [z × 2h], α^r [z × n])`.
pub fn debate_to_fact(tape: &mut Tape, utterance_memory: Var, fact_queries: Var, mask: &[bool]) -> Result<(Var, Var)> {
    attend(tape, fact_queries, utterance_memory, Some(mask))
}

/// Scales each fact representation by its recognition probability `[z × 1]`.
pub fn build_fact_memory(tape: &mut Tape, facts: Var, probs: Var) -> Result<Var> {
    tape.mul_col(facts, probs)
}

/// Claims read the fact memory. Returns `(O^f [k × 2h], α^f [k × z])`.
pub fn fact_to_claim(tape: &mut Tape, claims: Var, fact_memory: Var) -> Result<(Var, Var)> {
    attend(tape, claims, fact_memory, None)
}

/// Gated fusion:
/// `g = σ(O^u W^u + O^f W^f + b^g)`, `Ĉ = ReLU(C W^l + b^l)`,
/// `C̄ = Ĉ + g ⊙ O^u + (1 − g) ⊙ O^f`.
///
/// With one pathway absent the gate is computed from the remaining read and
/// the absent read contributes nothing. Returns `(C̄, g)`.
pub fn fuse(
    tape: &mut Tape,
    claims: Var,
    utterance_read: Option<Var>,
    fact_read: Option<Var>,
    vars: &FusionVars,
) -> Result<(Var, Option<Var>)> {
    let projected = tape.matmul(claims, vars.fusion_weight)?;
    let projected = tape.add_row(projected, vars.fusion_bias)?;
    let mut out = tape.relu(projected);
    if utterance_read.is_none() && fact_read.is_none() {
        return Ok((out, None));
    }
    let missing = || TensorError::Contract("gate parameters missing for an enabled pathway".into());
    let mut pre = None;
    for (read, weight) in [(utterance_read, vars.gate_utterance), (fact_read, vars.gate_fact)] {
        if let Some(read) = read {
            let term = tape.matmul(read, weight.ok_or_else(missing)?)?;
            pre = Some(match pre {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
    }
    let pre = tape.add_row(pre.expect("at least one read"), vars.gate_bias.ok_or_else(missing)?)?;
    let gate = tape.sigmoid(pre);
    if let Some(read) = utterance_read {
        let term = tape.mul(gate, read)?;
        out = tape.add(out, term)?;
    }
    if let Some(read) = fact_read {
        let complement = tape.affine(gate, -1.0, 1.0);
        let term = tape.mul(complement, read)?;
        out = tape.add(out, term)?;
    }
    Ok((out, Some(gate)))
}

/// Residual self-attention across claims with identity projections:
/// `A = softmax(C̄ C̄ᵀ / √width)`, `C' = C̄ + A C̄`. Padded claims are masked
/// as keys. Returns `(C', A)`.
pub fn across_claim(tape: &mut Tape, claims: Var, claim_mask: &[bool]) -> Result<(Var, Var)> {
    let [k, width] = tape.shape(claims) else {
        return Err(TensorError::Contract("claims must be a matrix".into()));
    };
    let (k, width) = (*k, *width);
    if claim_mask.len() != k {
        return Err(TensorError::Contract(format!(
            "{} mask entries for {k} claims",
            claim_mask.len()
        )));
    }
    let t = tape.transpose(claims)?;
    let scores = tape.matmul(claims, t)?;
    let scores = tape.scale(scores, 1.0 / (width as f64).sqrt());
    let mask = repeat_mask(k, claim_mask);
    let attn = tape.masked_softmax(scores, Some(&mask))?;
    let mixed = tape.matmul(attn, claims)?;
    let out = tape.add(claims, mixed)?;
    Ok((out, attn))
}

/// Runs `hops` rounds of claim refinement with shared parameters.
#[allow(clippy::too_many_arguments)]
pub fn run_hops(
    tape: &mut Tape,
    claims: Var,
    utterance_memory: Var,
    utterance_mask: &[bool],
    fact_memory: Option<Var>,
    claim_mask: &[bool],
    vars: &FusionVars,
    flags: HopFlags,
    hops: usize,
) -> Result<(Var, Vec<HopRecord>)> {
    if hops == 0 {
        return Err(TensorError::Domain {
            op: "run_hops",
            msg: "hop count must be at least 1".into(),
        });
    }
    let mut current = claims;
    let mut records = Vec::with_capacity(hops);
    for _ in 0..hops {
        let (utt_read, dtc) = if flags.utterance_memory {
            let (o, a) = debate_to_claim(tape, current, utterance_memory, utterance_mask)?;
            (Some(o), Some(a))
        } else {
            (None, None)
        };
        let (fact_read, ftc) = match (flags.fact_memory, fact_memory) {
            (true, Some(mem)) => {
                let (o, a) = fact_to_claim(tape, current, mem)?;
                (Some(o), Some(a))
            }
            (true, None) => {
                return Err(TensorError::Contract(
                    "fact memory pathway enabled without a fact memory".into(),
                ))
            }
            _ => (None, None),
        };
        let (fused, gate) = fuse(tape, current, utt_read, fact_read, vars)?;
        let (next, across) = if flags.self_attention {
            let (c, a) = across_claim(tape, fused, claim_mask)?;
            (c, Some(a))
        } else {
            (fused, None)
        };
        records.push(HopRecord {
            debate_to_claim: dtc,
            fact_to_claim: ftc,
            across_claim: across,
            gate,
        });
        current = next;
    }
    Ok((current, records))
}

/// Copies a `[rows × cols]` attention value into nested rows restricted to
/// the real rows and columns.
pub(crate) fn trimmed(t: &Tensor, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|i| t.row_slice(i)[..cols].to_vec()).collect()
}
