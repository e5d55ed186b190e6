//! Recurrent and pooling building blocks composed from tape primitives.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::params::{uniform, Bound, ParamId, Params};
use crate::tensor::{Result, Tensor, TensorError};

/// Recurrent weights for one LSTM direction. Gate blocks along the `4h`
/// axis are ordered input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register<R: Rng + ?Sized>(
        params: &mut Params,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        const RECURRENT_INIT: f64 = 0.08;
        let input_weight = params.insert(
            format!("{prefix}.input_weight"),
            uniform(rng, &[input_dim, 4 * hidden], RECURRENT_INIT),
        );
        let hidden_weight = params.insert(
            format!("{prefix}.hidden_weight"),
            uniform(rng, &[hidden, 4 * hidden], RECURRENT_INIT),
        );
        let bias = params.insert(format!("{prefix}.bias"), uniform(rng, &[1, 4 * hidden], RECURRENT_INIT));
        Self {
            input_weight,
            hidden_weight,
            bias,
            input_dim,
            hidden,
        }
    }

    pub fn vars(&self, bound: &Bound) -> LstmVars {
        LstmVars {
            input_weight: bound.var(self.input_weight),
            hidden_weight: bound.var(self.hidden_weight),
            bias: bound.var(self.bias),
            hidden: self.hidden,
        }
    }
}

/// Tape handles for an [`LstmParams`].
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub input_weight: Var,
    pub hidden_weight: Var,
    pub bias: Var,
    pub hidden: usize,
}

/// One LSTM step for a batch of rows: `x[n×in]`, `h_prev[n×h]`, `c_prev[n×h]`.
pub fn lstm_cell(tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let proj = tape.matmul(x, p.input_weight)?;
    let proj = tape.add_row(proj, p.bias)?;
    lstm_step(tape, proj, h_prev, c_prev, p)
}

/// LSTM step given the biased input projection `x·W_x + b` for this step.
fn lstm_step(tape: &mut Tape, proj: Var, h_prev: Var, c_prev: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let h = p.hidden;
    if tape.shape(h_prev).last() != Some(&h) || tape.shape(h_prev) != tape.shape(c_prev) {
        return Err(TensorError::Shape {
            op: "lstm_cell",
            left: tape.shape(h_prev).to_vec(),
            right: tape.shape(c_prev).to_vec(),
        });
    }
    let rec = tape.matmul(h_prev, p.hidden_weight)?;
    let gates = tape.add(proj, rec)?;
    let i_pre = tape.slice_cols(gates, 0, h)?;
    let f_pre = tape.slice_cols(gates, h, 2 * h)?;
    let g_pre = tape.slice_cols(gates, 2 * h, 3 * h)?;
    let o_pre = tape.slice_cols(gates, 3 * h, 4 * h)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c);
    let h_new = tape.mul(o, c_act)?;
    Ok((h_new, c))
}

/// Runs one direction over `steps` time steps of a batch of `batch` rows.
///
/// `inputs` is time-major `[(steps·batch) × in]`. `mask[t][b]` marks real
/// positions; at a padded position the state is carried through unchanged,
/// so a reverse pass starts from the zero state at each row's last real
/// token. Returns the hidden output at every step in time order.
pub fn run_lstm(
    tape: &mut Tape,
    inputs: Var,
    batch: usize,
    mask: &[Vec<bool>],
    p: &LstmVars,
    reverse: bool,
) -> Result<Vec<Var>> {
    let steps = mask.len();
    if steps == 0 || tape.shape(inputs)[0] != steps * batch {
        return Err(TensorError::Contract(format!(
            "lstm input has {} rows, expected {steps} steps × {batch}",
            tape.shape(inputs)[0]
        )));
    }
    let proj = tape.matmul(inputs, p.input_weight)?;
    let proj = tape.add_row(proj, p.bias)?;
    let mut h = tape.constant(Tensor::zeros(&[batch, p.hidden]));
    let mut c = tape.constant(Tensor::zeros(&[batch, p.hidden]));
    let mut outputs = vec![h; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let step_mask = &mask[t];
        if !step_mask.iter().any(|&m| m) {
            outputs[t] = h;
            continue;
        }
        let x_t = tape.slice_rows(proj, t * batch, (t + 1) * batch)?;
        let (h_new, c_new) = lstm_step(tape, x_t, h, c, p)?;
        if step_mask.iter().all(|&m| m) {
            h = h_new;
            c = c_new;
        } else {
            h = tape.blend_rows(h_new, h, step_mask)?;
            c = tape.blend_rows(c_new, c, step_mask)?;
        }
        outputs[t] = h;
    }
    Ok(outputs)
}

/// Bidirectional pass; each step's output is `[forward ⊕ backward]`, `[batch × 2h]`.
pub fn run_bilstm(
    tape: &mut Tape,
    inputs: Var,
    batch: usize,
    mask: &[Vec<bool>],
    forward: &LstmVars,
    backward: &LstmVars,
) -> Result<Vec<Var>> {
    let fwd = run_lstm(tape, inputs, batch, mask, forward, false)?;
    let bwd = run_lstm(tape, inputs, batch, mask, backward, true)?;
    fwd.into_iter()
        .zip(bwd)
        .map(|(f, b)| tape.concat_cols(&[f, b]))
        .collect()
}

/// Attention pooling over time: scores `s[b,t] = q · h_t[b]`, masked softmax
/// over `t`, and `Σ_t α[b,t] h_t[b]`. Returns `(pooled [batch×2h], α [batch×steps])`.
pub fn attention_pool(tape: &mut Tape, states: &[Var], query: Var, mask: &[Vec<bool>]) -> Result<(Var, Var)> {
    let steps = states.len();
    let scores: Vec<Var> = states.iter().map(|&h| tape.matmul(h, query)).collect::<Result<_>>()?;
    let scores = tape.concat_cols(&scores)?;
    let batch = tape.shape(scores)[0];
    // mask arrives time-major; the score matrix is batch-major.
    let mut flat = vec![false; batch * steps];
    for (t, row) in mask.iter().enumerate() {
        for (b, &m) in row.iter().enumerate() {
            flat[b * steps + t] = m;
        }
    }
    let alpha = tape.masked_softmax(scores, Some(&flat))?;
    let mut pooled = None;
    for (t, &h) in states.iter().enumerate() {
        let a_t = tape.slice_cols(alpha, t, t + 1)?;
        let term = tape.mul_col(h, a_t)?;
        pooled = Some(match pooled {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((pooled.expect("at least one step"), alpha))
}
