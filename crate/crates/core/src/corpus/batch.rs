use serde::{Deserialize, Serialize};

use super::{Case, Claim, CorpusError, Facts, Judgment, Role, Utterance, Vocabulary, PAD_ID};

/// Truncation limits. Truncation keeps the earliest utterances, claims and
/// tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub max_utterances: usize,
    pub max_utterance_len: usize,
    pub max_claims: usize,
    pub max_claim_len: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_utterances: 40,
            max_utterance_len: 16,
            max_claims: 4,
            max_claim_len: 10,
        }
    }
}

/// One case as padded id arrays with 0/1 masks at word, utterance and claim
/// level. Padding is always appended after real positions.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCase {
    pub case_id: String,
    /// `[n_pad][l_pad]` token ids.
    pub utterance_tokens: Vec<Vec<usize>>,
    pub word_mask: Vec<Vec<bool>>,
    pub roles: Vec<Role>,
    pub utterance_mask: Vec<bool>,
    /// `[k_pad][q_pad]` token ids.
    pub claim_tokens: Vec<Vec<usize>>,
    pub claim_word_mask: Vec<Vec<bool>>,
    pub claim_mask: Vec<bool>,
    pub gold_facts: Option<Facts>,
    /// One label per real claim.
    pub gold_judgments: Option<Vec<Judgment>>,
}

impl EncodedCase {
    pub fn num_utterances(&self) -> usize {
        self.utterance_mask.iter().filter(|&&m| m).count()
    }

    pub fn num_claims(&self) -> usize {
        self.claim_mask.iter().filter(|&&m| m).count()
    }

    /// `(n, l, k, q)` padded extents.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.utterance_tokens.len(),
            self.utterance_tokens[0].len(),
            self.claim_tokens.len(),
            self.claim_tokens[0].len(),
        )
    }

    /// Returns a copy with extra padding up to the given extents.
    pub fn padded(&self, n: usize, l: usize, k: usize, q: usize) -> Self {
        let (n0, l0, k0, q0) = self.dims();
        let (n, l, k, q) = (n.max(n0), l.max(l0), k.max(k0), q.max(q0));
        let grid = |rows: &[Vec<usize>], mask: &[Vec<bool>], r: usize, c: usize| {
            let mut ids = vec![vec![PAD_ID; c]; r];
            let mut m = vec![vec![false; c]; r];
            for (i, (row, mrow)) in rows.iter().zip(mask).enumerate() {
                ids[i][..row.len()].copy_from_slice(row);
                m[i][..mrow.len()].copy_from_slice(mrow);
            }
            (ids, m)
        };
        let (utterance_tokens, word_mask) = grid(&self.utterance_tokens, &self.word_mask, n, l);
        let (claim_tokens, claim_word_mask) = grid(&self.claim_tokens, &self.claim_word_mask, k, q);
        let mut roles = self.roles.clone();
        roles.resize(n, Role::Judge);
        let mut utterance_mask = self.utterance_mask.clone();
        utterance_mask.resize(n, false);
        let mut claim_mask = self.claim_mask.clone();
        claim_mask.resize(k, false);
        Self {
            case_id: self.case_id.clone(),
            utterance_tokens,
            word_mask,
            roles,
            utterance_mask,
            claim_tokens,
            claim_word_mask,
            claim_mask,
            gold_facts: self.gold_facts,
            gold_judgments: self.gold_judgments.clone(),
        }
    }

    /// Encodes raw claims and utterances, padding to the case's own extents
    /// after truncation.
    pub fn from_parts(
        case_id: &str,
        claims: &[Claim],
        utterances: &[Utterance],
        gold: Option<(Facts, &[Judgment])>,
        vocab: &Vocabulary,
        limits: &Limits,
    ) -> Result<Self, CorpusError> {
        let invalid = |msg: &str| CorpusError::Invalid {
            case_id: case_id.to_string(),
            msg: msg.to_string(),
        };
        if claims.is_empty() {
            return Err(invalid("case has no claims"));
        }
        if utterances.is_empty() {
            return Err(invalid("case has no utterances"));
        }
        let truncate = |text: &str, max: usize| {
            let mut ids = vocab.encode(text);
            ids.truncate(max);
            ids
        };
        let utts: Vec<(Role, Vec<usize>)> = utterances
            .iter()
            .take(limits.max_utterances)
            .map(|u| (u.role, truncate(&u.text, limits.max_utterance_len)))
            .collect();
        let cls: Vec<Vec<usize>> = claims
            .iter()
            .take(limits.max_claims)
            .map(|c| truncate(&c.text, limits.max_claim_len))
            .collect();
        if utts.iter().any(|(_, t)| t.is_empty()) {
            return Err(invalid("utterance with no tokens"));
        }
        if cls.iter().any(Vec::is_empty) {
            return Err(invalid("claim with no tokens"));
        }
        let l = utts.iter().map(|(_, t)| t.len()).max().unwrap_or(1);
        let q = cls.iter().map(Vec::len).max().unwrap_or(1);
        let pad = |rows: &[Vec<usize>], width: usize| -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
            rows.iter()
                .map(|r| {
                    let mut ids = r.clone();
                    ids.resize(width, PAD_ID);
                    let mask = (0..width).map(|i| i < r.len()).collect();
                    (ids, mask)
                })
                .unzip()
        };
        let utt_ids: Vec<Vec<usize>> = utts.iter().map(|(_, t)| t.clone()).collect();
        let (utterance_tokens, word_mask) = pad(&utt_ids, l);
        let (claim_tokens, claim_word_mask) = pad(&cls, q);
        let gold_judgments = gold.map(|(_, j)| j.iter().take(cls.len()).copied().collect());
        Ok(Self {
            case_id: case_id.to_string(),
            utterance_mask: vec![true; utterance_tokens.len()],
            roles: utts.iter().map(|(r, _)| *r).collect(),
            utterance_tokens,
            word_mask,
            claim_mask: vec![true; claim_tokens.len()],
            claim_tokens,
            claim_word_mask,
            gold_facts: gold.map(|(f, _)| f),
            gold_judgments,
        })
    }
}

/// Encodes one labelled case with no padding beyond its own extents.
pub fn encode_case(case: &Case, vocab: &Vocabulary, limits: &Limits) -> Result<EncodedCase, CorpusError> {
    EncodedCase::from_parts(
        &case.case_id,
        &case.claims,
        &case.utterances,
        Some((case.facts, &case.judgments)),
        vocab,
        limits,
    )
}

/// Cases padded to common extents equal to the limits.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub limits: Limits,
    pub cases: Vec<EncodedCase>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

pub fn encode_batch(cases: &[Case], vocab: &Vocabulary, limits: &Limits) -> Result<Batch, CorpusError> {
    let cases = cases
        .iter()
        .map(|c| {
            encode_case(c, vocab, limits).map(|e| {
                e.padded(
                    limits.max_utterances,
                    limits.max_utterance_len,
                    limits.max_claims,
                    limits.max_claim_len,
                )
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(Batch { limits: *limits, cases })
}
