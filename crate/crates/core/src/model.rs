//! The full judgment model: parameter layout, forward pass, traces and
//! per-case training gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{EncodedCase, FactLabel, Judgment, Role, FACT_COUNT, JUDGMENT_COUNT};
use crate::encoders::{encode_claims, encode_dialogue, encode_utterances, EncoderVars};
use crate::heads::{claim_loss, fact_loss, predict_facts, predict_judgment, total_loss};
use crate::interaction::{build_fact_memory, debate_to_fact, run_hops, trimmed, FusionVars, HopFlags};
use crate::nn::LstmParams;
use crate::params::{fan_in_uniform, uniform, Bound, ParamId, Params};
use crate::tensor::{Result, Tensor, TensorError};

/// Model variants obtained by removing components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_role: bool,
    pub no_utterance_memory: bool,
    /// Removes the fact-to-claim pathway; the fact head and its loss remain.
    pub no_fact_memory: bool,
    pub no_self_attention: bool,
    /// Removes every fact-related part: queries, head, loss and memory.
    pub single_task: bool,
}

impl Ablation {
    pub fn fact_head(&self) -> bool {
        !self.single_task
    }

    pub fn fact_pathway(&self) -> bool {
        !self.single_task && !self.no_fact_memory
    }

    pub fn utterance_pathway(&self) -> bool {
        !self.no_utterance_memory
    }

    /// Short identifier used in reports.
    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [
            (self.no_role, "no_role"),
            (self.no_utterance_memory, "no_utterance_memory"),
            (self.no_fact_memory, "no_fact_memory"),
            (self.no_self_attention, "no_self_attention"),
            (self.single_task, "single_task"),
        ] {
            if on {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

/// Where dropout is applied during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutSites {
    pub embeddings: bool,
    pub classifier_inputs: bool,
}

impl Default for DropoutSites {
    fn default() -> Self {
        Self {
            embeddings: true,
            classifier_inputs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub word_dim: usize,
    pub role_dim: usize,
    pub hidden: usize,
    pub hops: usize,
    pub drop_rate: f64,
    pub dropout_sites: DropoutSites,
    pub fact_loss_weight: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2,
            word_dim: 32,
            role_dim: 32,
            hidden: 32,
            hops: 3,
            drop_rate: 0.2,
            dropout_sites: DropoutSites::default(),
            fact_loss_weight: 1.0,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| {
            Err(TensorError::Domain {
                op: "model config",
                msg,
            })
        };
        if self.vocab_size < 2 {
            return bad(format!(
                "vocabulary size {} leaves no room for reserved ids",
                self.vocab_size
            ));
        }
        if self.word_dim == 0 || self.hidden == 0 || (self.role_dim == 0 && !self.ablation.no_role) {
            return bad("dimensions must be positive".into());
        }
        if self.hops == 0 {
            return bad("hop count must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return bad(format!("drop rate must lie in [0, 1), got {}", self.drop_rate));
        }
        if !self.fact_loss_weight.is_finite() || self.fact_loss_weight < 0.0 {
            return bad(format!(
                "fact loss weight must be finite and non-negative, got {}",
                self.fact_loss_weight
            ));
        }
        Ok(())
    }

    /// Width of every claim, utterance and fact vector.
    pub fn width(&self) -> usize {
        2 * self.hidden
    }
}

/// Dropout state for one forward pass.
#[derive(Debug, Clone)]
pub struct DropoutCtx {
    rate: f64,
    training: bool,
    sites: DropoutSites,
    rng: ChaCha8Rng,
}

impl DropoutCtx {
    pub fn inference() -> Self {
        Self {
            rate: 0.0,
            training: false,
            sites: DropoutSites::default(),
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn training(rate: f64, sites: DropoutSites, seed: u64) -> Self {
        Self {
            rate,
            training: true,
            sites,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn embedding(&mut self, tape: &mut Tape, v: Var) -> Result<Var> {
        let on = self.training && self.sites.embeddings;
        tape.dropout(v, self.rate, on, &mut self.rng)
    }

    pub fn classifier(&mut self, tape: &mut Tape, v: Var) -> Result<Var> {
        let on = self.training && self.sites.classifier_inputs;
        tape.dropout(v, self.rate, on, &mut self.rng)
    }
}

/// Forced fact probabilities, one optional value per label.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FactOverrides(pub [Option<f64>; FACT_COUNT]);

impl FactOverrides {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all(value: f64) -> Self {
        Self([Some(value); FACT_COUNT])
    }

    pub fn set(&mut self, label: FactLabel, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(TensorError::Domain {
                op: "fact override",
                msg: format!("probability for `{label}` must lie in [0, 1], got {value}"),
            });
        }
        self.0[label.index()] = Some(value);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Option::is_none)
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    word_embedding: ParamId,
    role_embedding: Option<ParamId>,
    utterance_fwd: LstmParams,
    utterance_bwd: LstmParams,
    utterance_query: ParamId,
    dialogue_fwd: LstmParams,
    dialogue_bwd: LstmParams,
    claim_fwd: LstmParams,
    claim_bwd: LstmParams,
    claim_query: ParamId,
    fact_queries: Option<ParamId>,
    gate_utterance: Option<ParamId>,
    gate_fact: Option<ParamId>,
    gate_bias: Option<ParamId>,
    fusion_weight: ParamId,
    fusion_bias: ParamId,
    judgment_weight: ParamId,
    judgment_bias: ParamId,
    fact_head_weight: Option<ParamId>,
    fact_head_bias: Option<ParamId>,
}

impl Layout {
    fn register(cfg: &ModelConfig, params: &mut Params, rng: &mut ChaCha8Rng) -> Self {
        let (d, r, h, w) = (cfg.word_dim, cfg.role_dim, cfg.hidden, cfg.width());
        let ab = cfg.ablation;
        let emb_bound = 1.0;
        let word_embedding = params.insert("embedding.word", uniform(rng, &[cfg.vocab_size, d], emb_bound));
        let role_embedding = (!ab.no_role).then(|| {
            let bound = 1.0;
            params.insert("embedding.role", uniform(rng, &[Role::ALL.len(), r], bound))
        });
        let utt_in = if ab.no_role { d } else { d + r };
        let utterance_fwd = LstmParams::register(params, "utterance.fwd", utt_in, h, rng);
        let utterance_bwd = LstmParams::register(params, "utterance.bwd", utt_in, h, rng);
        let utterance_query = params.insert("utterance.query", fan_in_uniform(rng, &[w, 1], w));
        let dialogue_fwd = LstmParams::register(params, "dialogue.fwd", w, h, rng);
        let dialogue_bwd = LstmParams::register(params, "dialogue.bwd", w, h, rng);
        let claim_fwd = LstmParams::register(params, "claim.fwd", d, h, rng);
        let claim_bwd = LstmParams::register(params, "claim.bwd", d, h, rng);
        let claim_query = params.insert("claim.query", fan_in_uniform(rng, &[w, 1], w));
        let fact_queries = ab
            .fact_head()
            .then(|| params.insert("fact.queries", fan_in_uniform(rng, &[FACT_COUNT, w], w)));
        let gate_utterance = ab
            .utterance_pathway()
            .then(|| params.insert("gate.utterance", fan_in_uniform(rng, &[w, w], w)));
        let gate_fact = ab
            .fact_pathway()
            .then(|| params.insert("gate.fact", fan_in_uniform(rng, &[w, w], w)));
        let gate_bias = (ab.utterance_pathway() || ab.fact_pathway())
            .then(|| params.insert("gate.bias", fan_in_uniform(rng, &[1, w], w)));
        let fusion_weight = params.insert("fusion.weight", fan_in_uniform(rng, &[w, w], w));
        let fusion_bias = params.insert("fusion.bias", fan_in_uniform(rng, &[1, w], w));
        let judgment_weight = params.insert("judgment.weight", fan_in_uniform(rng, &[w, JUDGMENT_COUNT], w));
        let judgment_bias = params.insert("judgment.bias", fan_in_uniform(rng, &[1, JUDGMENT_COUNT], w));
        let (fact_head_weight, fact_head_bias) = if ab.fact_head() {
            (
                Some(params.insert("fact_head.weight", fan_in_uniform(rng, &[FACT_COUNT, w], w))),
                Some(params.insert("fact_head.bias", fan_in_uniform(rng, &[FACT_COUNT, 1], w))),
            )
        } else {
            (None, None)
        };
        Self {
            word_embedding,
            role_embedding,
            utterance_fwd,
            utterance_bwd,
            utterance_query,
            dialogue_fwd,
            dialogue_bwd,
            claim_fwd,
            claim_bwd,
            claim_query,
            fact_queries,
            gate_utterance,
            gate_fact,
            gate_bias,
            fusion_weight,
            fusion_bias,
            judgment_weight,
            judgment_bias,
            fact_head_weight,
            fact_head_bias,
        }
    }
}

/// Attention maps of one hop, trimmed to real claims, utterances and facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopTrace {
    /// `[k × n]`; absent without the utterance memory.
    pub debate_to_claim: Option<Vec<Vec<f64>>>,
    /// `[k × z]`; absent without the fact memory.
    pub fact_to_claim: Option<Vec<Vec<f64>>>,
    /// `[k × k]`; absent without self-attention.
    pub across_claim: Option<Vec<Vec<f64>>>,
    /// Fusion gate `[k × 2h]`.
    pub gate: Option<Vec<Vec<f64>>>,
}

/// Everything one forward pass produced for a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    /// Word attention per real utterance, over its real tokens.
    pub utterance_word_attention: Vec<Vec<f64>>,
    /// Word attention per real claim, over its real tokens.
    pub claim_word_attention: Vec<Vec<f64>>,
    /// `[z × n]`.
    pub debate_to_fact: Option<Vec<Vec<f64>>>,
    /// Fact probabilities as predicted by the model.
    pub model_fact_probs: Option<Vec<f64>>,
    /// Fact probabilities that scaled the fact memory (after overrides).
    pub fact_probs: Option<Vec<f64>>,
    pub hops: Vec<HopTrace>,
    /// `[k × 3]`.
    pub claim_logits: Vec<Vec<f64>>,
    /// `[k × 3]`.
    pub claim_probs: Vec<Vec<f64>>,
}

impl ForwardTrace {
    fn last_hop(&self) -> &HopTrace {
        self.hops.last().expect("at least one hop")
    }

    pub fn debate_to_claim(&self) -> Option<&Vec<Vec<f64>>> {
        self.last_hop().debate_to_claim.as_ref()
    }

    pub fn fact_to_claim(&self) -> Option<&Vec<Vec<f64>>> {
        self.last_hop().fact_to_claim.as_ref()
    }

    pub fn across_claim(&self) -> Option<&Vec<Vec<f64>>> {
        self.last_hop().across_claim.as_ref()
    }

    /// Argmax judgment per claim; ties go to the lower index.
    pub fn predictions(&self) -> Vec<Judgment> {
        self.claim_probs
            .iter()
            .map(|row| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &p)| if p > row[best] { i } else { best });
                Judgment::from_index(best).expect("three classes")
            })
            .collect()
    }

    /// Facts with probability above one half.
    pub fn fact_predictions(&self) -> Option<[bool; FACT_COUNT]> {
        let probs = self.model_fact_probs.as_ref()?;
        let mut out = [false; FACT_COUNT];
        for (o, &p) in out.iter_mut().zip(probs) {
            *o = p > 0.5;
        }
        Some(out)
    }
}

/// Tape handles produced by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub utterance_word_attention: Var,
    pub claim_word_attention: Var,
    pub debate_to_fact: Option<Var>,
    pub model_fact_probs: Option<Var>,
    pub fact_probs: Option<Var>,
    pub hops: Vec<crate::interaction::HopRecord>,
    pub claim_logits: Var,
    pub claim_probs: Var,
}

/// Loss values and parameter gradients for one case.
#[derive(Debug, Clone)]
pub struct CaseGradients {
    pub loss: f64,
    pub claim_loss: f64,
    pub fact_loss: Option<f64>,
    pub grads: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: Params,
    layout: Layout,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let layout = Layout::register(&config, &mut params, &mut rng);
        Ok(Self { config, params, layout })
    }

    /// Builds a model whose parameters are taken by name from `params`.
    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        let template = Self::new(config.clone(), 0)?;
        let mut out = template.params.clone();
        for id in template.params.ids() {
            let name = template.params.name(id);
            let value = params
                .by_name(name)
                .ok_or_else(|| TensorError::Contract(format!("parameter `{name}` missing")))?;
            if value.shape() != template.params.get(id).shape() {
                return Err(TensorError::Shape {
                    op: "load parameter",
                    left: value.shape().to_vec(),
                    right: template.params.get(id).shape().to_vec(),
                });
            }
            *out.get_mut(id) = value.clone();
        }
        if params.len() != out.len() {
            let extra: Vec<&str> = params.iter().map(|(n, _)| n).filter(|n| out.id(n).is_none()).collect();
            return Err(TensorError::Contract(format!("unexpected parameters {extra:?}")));
        }
        Ok(Self {
            config,
            params: out,
            layout: template.layout,
        })
    }

    /// The same weights under another ablation; parameters the variant
    /// lacks are dropped.
    pub fn variant(&self, ablation: Ablation) -> Result<Self> {
        let config = ModelConfig {
            ablation,
            ..self.config.clone()
        };
        let template = Self::new(config.clone(), 0)?;
        let mut params = Params::new();
        for (name, _) in template.params.iter() {
            let value = self
                .params
                .by_name(name)
                .ok_or_else(|| TensorError::Contract(format!("variant needs parameter `{name}`")))?;
            params.insert(name, value.clone());
        }
        Self::from_params(config, params)
    }

    /// Same layout with a different hop count.
    pub fn with_hops(&self, hops: usize) -> Result<Self> {
        let config = ModelConfig {
            hops,
            ..self.config.clone()
        };
        config.validate()?;
        Ok(Self {
            config,
            params: self.params.clone(),
            layout: self.layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Encoder parameter handles on a tape the parameters are bound to.
    pub fn encoder_vars(&self, b: &Bound) -> EncoderVars {
        let l = &self.layout;
        EncoderVars {
            word_embedding: b.var(l.word_embedding),
            role_embedding: l.role_embedding.map(|id| b.var(id)),
            utterance_fwd: l.utterance_fwd.vars(b),
            utterance_bwd: l.utterance_bwd.vars(b),
            utterance_query: b.var(l.utterance_query),
            dialogue_fwd: l.dialogue_fwd.vars(b),
            dialogue_bwd: l.dialogue_bwd.vars(b),
            claim_fwd: l.claim_fwd.vars(b),
            claim_bwd: l.claim_bwd.vars(b),
            claim_query: b.var(l.claim_query),
        }
    }

    fn check_case(&self, case: &EncodedCase) -> Result<()> {
        let contract = |msg: String| Err(TensorError::Contract(format!("case `{}`: {msg}", case.case_id)));
        if case.num_claims() == 0 || case.num_utterances() == 0 {
            return contract("needs at least one claim and one utterance".into());
        }
        let vocab = self.config.vocab_size;
        let all_tokens = case.utterance_tokens.iter().chain(&case.claim_tokens).flatten();
        if let Some(t) = all_tokens.copied().find(|&t| t >= vocab) {
            return contract(format!("token id {t} outside vocabulary of {vocab}"));
        }
        Ok(())
    }

    /// Records the forward pass of one case on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        case: &EncodedCase,
        overrides: &FactOverrides,
        dropout: &mut DropoutCtx,
    ) -> Result<ForwardVars> {
        self.check_case(case)?;
        let l = &self.layout;
        let ab = self.config.ablation;
        let ev = self.encoder_vars(bound);
        let (utterances, utterance_word_attention) =
            encode_utterances(tape, &ev, &case.utterance_tokens, &case.roles, &case.word_mask, dropout)?;
        let memory = encode_dialogue(tape, &ev, utterances, &case.utterance_mask)?;
        let (claims, claim_word_attention) =
            encode_claims(tape, &ev, &case.claim_tokens, &case.claim_word_mask, dropout)?;

        let (mut debate_to_fact_attn, mut model_fact_probs, mut fact_probs, mut fact_memory) = (None, None, None, None);
        if let (Some(q), Some(w), Some(b)) = (l.fact_queries, l.fact_head_weight, l.fact_head_bias) {
            let (facts, alpha) = debate_to_fact(tape, memory, bound.var(q), &case.utterance_mask)?;
            let head_in = dropout.classifier(tape, facts)?;
            let (_, probs) = predict_facts(tape, head_in, bound.var(w), bound.var(b))?;
            let effective = apply_overrides(tape, probs, overrides)?;
            if ab.fact_pathway() {
                fact_memory = Some(build_fact_memory(tape, facts, effective)?);
            }
            debate_to_fact_attn = Some(alpha);
            model_fact_probs = Some(probs);
            fact_probs = Some(effective);
        } else if !overrides.is_empty() {
            return Err(TensorError::Contract("this model has no fact head to override".into()));
        }

        let fusion = FusionVars {
            gate_utterance: l.gate_utterance.map(|id| bound.var(id)),
            gate_fact: l.gate_fact.map(|id| bound.var(id)),
            gate_bias: l.gate_bias.map(|id| bound.var(id)),
            fusion_weight: bound.var(l.fusion_weight),
            fusion_bias: bound.var(l.fusion_bias),
        };
        let flags = HopFlags {
            utterance_memory: ab.utterance_pathway(),
            fact_memory: ab.fact_pathway(),
            self_attention: !ab.no_self_attention,
        };
        let (refined, hops) = run_hops(
            tape,
            claims,
            memory,
            &case.utterance_mask,
            fact_memory,
            &case.claim_mask,
            &fusion,
            flags,
            self.config.hops,
        )?;
        let head_in = dropout.classifier(tape, refined)?;
        let (claim_logits, claim_probs) =
            predict_judgment(tape, head_in, bound.var(l.judgment_weight), bound.var(l.judgment_bias))?;
        Ok(ForwardVars {
            utterance_word_attention,
            claim_word_attention,
            debate_to_fact: debate_to_fact_attn,
            model_fact_probs,
            fact_probs,
            hops,
            claim_logits,
            claim_probs,
        })
    }

    /// Deterministic inference with dropout off.
    pub fn infer(&self, case: &EncodedCase, overrides: &FactOverrides) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let vars = self.forward(&mut tape, &bound, case, overrides, &mut DropoutCtx::inference())?;
        Ok(trace_from(&tape, &vars, case))
    }

    /// Loss and gradients for one labelled case.
    pub fn case_gradients(&self, case: &EncodedCase, dropout: &mut DropoutCtx) -> Result<CaseGradients> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let vars = self.forward(&mut tape, &bound, case, &FactOverrides::none(), dropout)?;
        let (loss, claim, fact) = self.loss_on(&mut tape, &vars, case)?;
        let values = (
            tape.value(loss).item(),
            tape.value(claim).item(),
            fact.map(|f| tape.value(f).item()),
        );
        let grads = tape.backward(loss)?;
        Ok(CaseGradients {
            loss: values.0,
            claim_loss: values.1,
            fact_loss: values.2,
            grads: bound.grads(&grads),
        })
    }

    /// Total, claim and fact losses of a recorded forward pass.
    pub fn loss_on(&self, tape: &mut Tape, vars: &ForwardVars, case: &EncodedCase) -> Result<(Var, Var, Option<Var>)> {
        let missing = || TensorError::Contract(format!("case `{}` has no gold labels", case.case_id));
        let gold = case.gold_judgments.as_ref().ok_or_else(missing)?;
        let targets: Vec<Vec<f64>> = gold
            .iter()
            .map(|j| {
                let mut row = vec![0.0; JUDGMENT_COUNT];
                row[j.index()] = 1.0;
                row
            })
            .collect();
        let claim = claim_loss(tape, vars.claim_probs, &targets)?;
        let fact = match vars.model_fact_probs {
            Some(p) => {
                let facts = case.gold_facts.ok_or_else(missing)?;
                Some(fact_loss(tape, p, &facts.0)?)
            }
            None => None,
        };
        let total = total_loss(tape, claim, fact, self.config.fact_loss_weight)?;
        Ok((total, claim, fact))
    }
}

fn apply_overrides(tape: &mut Tape, probs: Var, overrides: &FactOverrides) -> Result<Var> {
    if overrides.is_empty() {
        return Ok(probs);
    }
    let keep: Vec<f64> = overrides
        .0
        .iter()
        .map(|o| if o.is_some() { 0.0 } else { 1.0 })
        .collect();
    let forced: Vec<f64> = overrides.0.iter().map(|o| o.unwrap_or(0.0)).collect();
    let kept = tape.mul_const(probs, keep)?;
    let forced = tape.constant(Tensor::matrix(FACT_COUNT, 1, forced)?);
    tape.add(kept, forced)
}

/// Copies the values behind `vars` into a trace restricted to real positions.
pub fn trace_from(tape: &Tape, vars: &ForwardVars, case: &EncodedCase) -> ForwardTrace {
    let n = case.num_utterances();
    let k = case.num_claims();
    let ragged = |attn: Var, mask: &[Vec<bool>], rows: usize| -> Vec<Vec<f64>> {
        let t = tape.value(attn);
        (0..rows)
            .map(|i| {
                let len = mask[i].iter().filter(|&&m| m).count();
                t.row_slice(i)[..len].to_vec()
            })
            .collect()
    };
    let matrix = |v: Option<Var>, rows: usize, cols: usize| v.map(|v| trimmed(tape.value(v), rows, cols));
    let column = |v: Option<Var>| v.map(|v| tape.value(v).data().to_vec());
    let width = tape.value(vars.claim_probs).cols();
    let hops = vars
        .hops
        .iter()
        .map(|h| HopTrace {
            debate_to_claim: matrix(h.debate_to_claim, k, n),
            fact_to_claim: matrix(h.fact_to_claim, k, FACT_COUNT),
            across_claim: matrix(h.across_claim, k, k),
            gate: h.gate.map(|g| {
                let t = tape.value(g);
                trimmed(t, k, t.cols())
            }),
        })
        .collect();
    ForwardTrace {
        utterance_word_attention: ragged(vars.utterance_word_attention, &case.word_mask, n),
        claim_word_attention: ragged(vars.claim_word_attention, &case.claim_word_mask, k),
        debate_to_fact: matrix(vars.debate_to_fact, FACT_COUNT, n),
        model_fact_probs: column(vars.model_fact_probs),
        fact_probs: column(vars.fact_probs),
        hops,
        claim_logits: trimmed(tape.value(vars.claim_logits), k, width),
        claim_probs: trimmed(tape.value(vars.claim_probs), k, width),
    }
}
