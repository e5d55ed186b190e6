//! Utterance, dialogue and claim encoders.
//!
//! An utterance's words are embedded, each word vector is concatenated with
//! the speaker's role embedding, a BiLSTM runs over the sequence and a
//! learned query pools the states into one vector. A second BiLSTM runs over
//! the sequence of utterance vectors to give each utterance its dialogue
//! context. Claims go through the same word-level pipeline with their own
//! BiLSTM and query and no role channel; the word embedding table is shared.

use crate::autodiff::{Tape, Var};
use crate::corpus::Role;
use crate::nn::{attention_pool, run_bilstm, LstmVars};
use crate::tensor::{Result, TensorError};
use crate::DropoutCtx;

/// Tape handles for the encoder parameters.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub word_embedding: Var,
    /// Absent when roles are ablated.
    pub role_embedding: Option<Var>,
    pub utterance_fwd: LstmVars,
    pub utterance_bwd: LstmVars,
    pub utterance_query: Var,
    pub dialogue_fwd: LstmVars,
    pub dialogue_bwd: LstmVars,
    pub claim_fwd: LstmVars,
    pub claim_bwd: LstmVars,
    pub claim_query: Var,
}

fn time_major_mask(word_mask: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let steps = word_mask.first().map_or(0, Vec::len);
    (0..steps)
        .map(|t| word_mask.iter().map(|row| row[t]).collect())
        .collect()
}

fn check_grid(tokens: &[Vec<usize>], mask: &[Vec<bool>]) -> Result<()> {
    let width = tokens.first().map_or(0, Vec::len);
    if tokens.is_empty() || width == 0 {
        return Err(TensorError::Contract("empty token grid".into()));
    }
    if mask.len() != tokens.len()
        || tokens
            .iter()
            .zip(mask)
            .any(|(t, m)| t.len() != width || m.len() != width)
    {
        return Err(TensorError::Contract("token grid and mask disagree in shape".into()));
    }
    Ok(())
}

/// Word-level BiLSTM with attention pooling over a padded `[rows × steps]`
/// grid of token ids. Rows whose mask is all false pool to the zero vector.
#[allow(clippy::too_many_arguments)]
fn encode_sequences(
    tape: &mut Tape,
    word_embedding: Var,
    role_rows: Option<(Var, &[Role])>,
    tokens: &[Vec<usize>],
    mask: &[Vec<bool>],
    fwd: &LstmVars,
    bwd: &LstmVars,
    query: Var,
    dropout: &mut DropoutCtx,
) -> Result<(Var, Var)> {
    check_grid(tokens, mask)?;
    let rows = tokens.len();
    let steps = tokens[0].len();
    let ids: Vec<usize> = (0..steps).flat_map(|t| tokens.iter().map(move |r| r[t])).collect();
    let words = tape.gather_rows(word_embedding, &ids)?;
    let inputs = match role_rows {
        Some((table, roles)) => {
            let role_ids: Vec<usize> = (0..steps).flat_map(|_| roles.iter().map(|r| r.index())).collect();
            let role_vecs = tape.gather_rows(table, &role_ids)?;
            tape.concat_cols(&[words, role_vecs])?
        }
        None => words,
    };
    let inputs = dropout.embedding(tape, inputs)?;
    let tm_mask = time_major_mask(mask);
    let states = run_bilstm(tape, inputs, rows, &tm_mask, fwd, bwd)?;
    attention_pool(tape, &states, query, &tm_mask)
}

/// Encodes all utterances of a case at once.
/// Returns `(U [n × 2h], word attention [n × l])`.
pub fn encode_utterances(
    tape: &mut Tape,
    vars: &EncoderVars,
    tokens: &[Vec<usize>],
    roles: &[Role],
    word_mask: &[Vec<bool>],
    dropout: &mut DropoutCtx,
) -> Result<(Var, Var)> {
    if roles.len() != tokens.len() {
        return Err(TensorError::Contract(format!(
            "{} roles for {} utterances",
            roles.len(),
            tokens.len()
        )));
    }
    let role_rows = vars.role_embedding.map(|table| (table, roles));
    encode_sequences(
        tape,
        vars.word_embedding,
        role_rows,
        tokens,
        word_mask,
        &vars.utterance_fwd,
        &vars.utterance_bwd,
        vars.utterance_query,
        dropout,
    )
}

/// Single-utterance form of [`encode_utterances`].
pub fn encode_utterance(
    tape: &mut Tape,
    vars: &EncoderVars,
    tokens: &[usize],
    role: Role,
    mask: &[bool],
    dropout: &mut DropoutCtx,
) -> Result<(Var, Var)> {
    if !mask.iter().any(|&m| m) {
        return Err(TensorError::Contract("utterance has no unmasked tokens".into()));
    }
    encode_utterances(tape, vars, &[tokens.to_vec()], &[role], &[mask.to_vec()], dropout)
}

/// Dialogue-level BiLSTM over utterance vectors `[n × 2h]`; returns the
/// per-utterance outputs `[n × 2h]`.
pub fn encode_dialogue(tape: &mut Tape, vars: &EncoderVars, utterances: Var, mask: &[bool]) -> Result<Var> {
    let n = tape.shape(utterances)[0];
    if mask.len() != n {
        return Err(TensorError::Contract(format!(
            "{} mask entries for {n} utterances",
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(TensorError::Contract("dialogue has no utterances".into()));
    }
    let steps: Vec<Vec<bool>> = mask.iter().map(|&m| vec![m]).collect();
    let outputs = run_bilstm(tape, utterances, 1, &steps, &vars.dialogue_fwd, &vars.dialogue_bwd)?;
    tape.concat_rows(&outputs)
}

/// Encodes all claims of a case. Returns `(C [k × 2h], word attention [k × q])`.
pub fn encode_claims(
    tape: &mut Tape,
    vars: &EncoderVars,
    tokens: &[Vec<usize>],
    word_mask: &[Vec<bool>],
    dropout: &mut DropoutCtx,
) -> Result<(Var, Var)> {
    encode_sequences(
        tape,
        vars.word_embedding,
        None,
        tokens,
        word_mask,
        &vars.claim_fwd,
        &vars.claim_bwd,
        vars.claim_query,
        dropout,
    )
}

/// Single-claim form of [`encode_claims`].
pub fn encode_claim(
    tape: &mut Tape,
    vars: &EncoderVars,
    tokens: &[usize],
    mask: &[bool],
    dropout: &mut DropoutCtx,
) -> Result<(Var, Var)> {
    if !mask.iter().any(|&m| m) {
        return Err(TensorError::Contract("claim has no unmasked tokens".into()));
    }
    encode_claims(tape, vars, &[tokens.to_vec()], &[mask.to_vec()], dropout)
}
