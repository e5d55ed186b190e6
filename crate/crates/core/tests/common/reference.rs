//! Straight-line forward pass over plain vectors, written formula by formula
//! with explicit loops and no tape. It reads the model's parameters by name
//! and works on the unpadded case, so it shares no code path with the
//! library forward pass.

use casejudge::corpus::{EncodedCase, Judgment, Role};
use casejudge::{Ablation, Model};

type Vector = Vec<f64>;

pub struct Reference<'a> {
    model: &'a Model,
}

#[derive(Debug, Clone)]
pub struct ReferenceHop {
    pub debate_to_claim: Option<Vec<Vector>>,
    pub fact_to_claim: Option<Vec<Vector>>,
    pub across_claim: Option<Vec<Vector>>,
    pub gate: Option<Vec<Vector>>,
}

#[derive(Debug, Clone)]
pub struct ReferenceOutput {
    pub utterance_word_attention: Vec<Vector>,
    pub claim_word_attention: Vec<Vector>,
    pub utterances: Vec<Vector>,
    pub memory: Vec<Vector>,
    pub claims: Vec<Vector>,
    pub debate_to_fact: Option<Vec<Vector>>,
    pub model_fact_probs: Option<Vector>,
    pub fact_probs: Option<Vector>,
    pub hops: Vec<ReferenceHop>,
    pub refined_claims: Vec<Vector>,
    pub claim_logits: Vec<Vector>,
    pub claim_probs: Vec<Vector>,
    pub claim_loss: Option<f64>,
    pub fact_loss: Option<f64>,
    pub total_loss: Option<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(scores: &[f64]) -> Vector {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn weighted_rows(weights: &[f64], rows: &[Vector]) -> Vector {
    let mut out = vec![0.0; rows[0].len()];
    for (w, row) in weights.iter().zip(rows) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += w * v;
        }
    }
    out
}

/// Attention of one query over memory rows: weights and weighted sum.
fn attend(query: &[f64], memory: &[Vector], scale: f64) -> (Vector, Vector) {
    let scores: Vec<f64> = memory.iter().map(|m| dot(query, m) * scale).collect();
    let alpha = softmax(&scores);
    let out = weighted_rows(&alpha, memory);
    (out, alpha)
}

impl<'a> Reference<'a> {
    pub fn new(model: &'a Model) -> Self {
        Self { model }
    }

    fn ablation(&self) -> Ablation {
        self.model.config().ablation
    }

    fn has(&self, name: &str) -> bool {
        self.model.params().by_name(name).is_some()
    }

    /// `(rows, cols, data)` of a named parameter.
    fn param(&self, name: &str) -> (usize, usize, &[f64]) {
        let t = self
            .model
            .params()
            .by_name(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        let shape = t.shape();
        (shape[0], shape[1], t.data())
    }

    fn row(&self, name: &str, i: usize) -> Vector {
        let (_, cols, data) = self.param(name);
        data[i * cols..(i + 1) * cols].to_vec()
    }

    fn vector(&self, name: &str) -> Vector {
        self.param(name).2.to_vec()
    }

    /// `x · W` with `W [in × out]`.
    fn times(&self, x: &[f64], name: &str) -> Vector {
        let (rows, cols, data) = self.param(name);
        assert_eq!(x.len(), rows, "{name}");
        (0..cols)
            .map(|j| (0..rows).map(|i| x[i] * data[i * cols + j]).sum())
            .collect()
    }

    fn lstm(&self, prefix: &str, inputs: &[Vector]) -> Vec<Vector> {
        let hidden = self.param(&format!("{prefix}.hidden_weight")).0;
        let bias = self.vector(&format!("{prefix}.bias"));
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        let mut out = Vec::new();
        for x in inputs {
            let a = self.times(x, &format!("{prefix}.input_weight"));
            let b = self.times(&h, &format!("{prefix}.hidden_weight"));
            let pre: Vec<f64> = (0..4 * hidden).map(|j| a[j] + b[j] + bias[j]).collect();
            let mut h_new = vec![0.0; hidden];
            for u in 0..hidden {
                let i = sigmoid(pre[u]);
                let f = sigmoid(pre[hidden + u]);
                let g = pre[2 * hidden + u].tanh();
                let o = sigmoid(pre[3 * hidden + u]);
                c[u] = f * c[u] + i * g;
                h_new[u] = o * c[u].tanh();
            }
            h = h_new;
            out.push(h.clone());
        }
        out
    }

    fn bilstm(&self, prefix: &str, inputs: &[Vector]) -> Vec<Vector> {
        let fwd = self.lstm(&format!("{prefix}.fwd"), inputs);
        let reversed: Vec<Vector> = inputs.iter().rev().cloned().collect();
        let mut bwd = self.lstm(&format!("{prefix}.bwd"), &reversed);
        bwd.reverse();
        fwd.into_iter()
            .zip(bwd)
            .map(|(mut f, b)| {
                f.extend(b);
                f
            })
            .collect()
    }

    /// Word BiLSTM states pooled by a learned query.
    fn pool(&self, states: &[Vector], query: &str) -> (Vector, Vector) {
        let q = self.vector(query);
        attend(&q, states, 1.0)
    }

    fn encode_utterance(&self, tokens: &[usize], role: Role) -> (Vector, Vector) {
        let inputs: Vec<Vector> = tokens
            .iter()
            .map(|&t| {
                let mut x = self.row("embedding.word", t);
                if !self.ablation().no_role {
                    x.extend(self.row("embedding.role", role.index()));
                }
                x
            })
            .collect();
        let states = self.bilstm("utterance", &inputs);
        self.pool(&states, "utterance.query")
    }

    fn encode_claim(&self, tokens: &[usize]) -> (Vector, Vector) {
        let inputs: Vec<Vector> = tokens.iter().map(|&t| self.row("embedding.word", t)).collect();
        let states = self.bilstm("claim", &inputs);
        self.pool(&states, "claim.query")
    }

    /// Runs the model on the real positions of `case`. `overrides[p]`
    /// replaces the probability that scales fact `p` in the fact memory.
    pub fn forward(&self, case: &EncodedCase, overrides: &[Option<f64>]) -> ReferenceOutput {
        let real_tokens = |ids: &[usize], mask: &[bool]| -> Vec<usize> {
            ids.iter().zip(mask).filter(|(_, &m)| m).map(|(&t, _)| t).collect()
        };
        let ab = self.ablation();
        let hops = self.model.config().hops;

        // Utterance and dialogue encoders.
        let mut utterances = Vec::new();
        let mut utterance_word_attention = Vec::new();
        for i in 0..case.utterance_mask.len() {
            if !case.utterance_mask[i] {
                continue;
            }
            let tokens = real_tokens(&case.utterance_tokens[i], &case.word_mask[i]);
            let (u, a) = self.encode_utterance(&tokens, case.roles[i]);
            utterances.push(u);
            utterance_word_attention.push(a);
        }
        let memory = self.bilstm("dialogue", &utterances);

        // Claim encoder.
        let mut claims = Vec::new();
        let mut claim_word_attention = Vec::new();
        for j in 0..case.claim_mask.len() {
            if !case.claim_mask[j] {
                continue;
            }
            let tokens = real_tokens(&case.claim_tokens[j], &case.claim_word_mask[j]);
            let (c, a) = self.encode_claim(&tokens);
            claims.push(c);
            claim_word_attention.push(a);
        }

        // Fact queries, fact head and the probability-scaled fact memory.
        let (mut debate_to_fact, mut model_fact_probs, mut fact_probs, mut fact_memory) = (None, None, None, None);
        if self.has("fact.queries") {
            let z = self.param("fact.queries").0;
            let mut reads = Vec::new();
            let mut alphas = Vec::new();
            for p in 0..z {
                let (f, a) = attend(&self.row("fact.queries", p), &memory, 1.0);
                reads.push(f);
                alphas.push(a);
            }
            let bias = self.vector("fact_head.bias");
            let probs: Vector = (0..z)
                .map(|p| sigmoid(dot(&self.row("fact_head.weight", p), &reads[p]) + bias[p]))
                .collect();
            let effective: Vector = (0..z)
                .map(|p| overrides.get(p).copied().flatten().unwrap_or(probs[p]))
                .collect();
            if !ab.no_fact_memory {
                fact_memory = Some(
                    reads
                        .iter()
                        .zip(&effective)
                        .map(|(f, &y)| f.iter().map(|v| v * y).collect::<Vector>())
                        .collect::<Vec<Vector>>(),
                );
            }
            debate_to_fact = Some(alphas);
            model_fact_probs = Some(probs);
            fact_probs = Some(effective);
        }

        // Hops.
        let width = claims[0].len();
        let mut current = claims.clone();
        let mut hop_records = Vec::new();
        for _ in 0..hops {
            let k = current.len();
            let mut fused = Vec::new();
            let (mut dtc, mut ftc, mut gates) = (Vec::new(), Vec::new(), Vec::new());
            for c in &current {
                let read_u = (!ab.no_utterance_memory).then(|| attend(c, &memory, 1.0));
                let read_f = fact_memory.as_ref().map(|m| attend(c, m, 1.0));
                let projected = self.times(c, "fusion.weight");
                let fb = self.vector("fusion.bias");
                let mut out: Vector = projected.iter().zip(&fb).map(|(x, b)| (x + b).max(0.0)).collect();
                if read_u.is_some() || read_f.is_some() {
                    let mut pre = self.vector("gate.bias");
                    if let Some((o, _)) = &read_u {
                        let t = self.times(o, "gate.utterance");
                        pre.iter_mut().zip(t).for_each(|(p, v)| *p += v);
                    }
                    if let Some((o, _)) = &read_f {
                        let t = self.times(o, "gate.fact");
                        pre.iter_mut().zip(t).for_each(|(p, v)| *p += v);
                    }
                    let g: Vector = pre.iter().map(|&x| sigmoid(x)).collect();
                    for d in 0..width {
                        if let Some((o, _)) = &read_u {
                            out[d] += g[d] * o[d];
                        }
                        if let Some((o, _)) = &read_f {
                            out[d] += (1.0 - g[d]) * o[d];
                        }
                    }
                    gates.push(g);
                }
                if let Some((_, a)) = read_u {
                    dtc.push(a);
                }
                if let Some((_, a)) = read_f {
                    ftc.push(a);
                }
                fused.push(out);
            }
            let across = if ab.no_self_attention {
                current = fused;
                None
            } else {
                let scale = 1.0 / (width as f64).sqrt();
                let mut next = Vec::new();
                let mut weights = Vec::new();
                for j in 0..k {
                    let (mixed, a) = attend(&fused[j], &fused, scale);
                    next.push(fused[j].iter().zip(&mixed).map(|(x, m)| x + m).collect());
                    weights.push(a);
                }
                current = next;
                Some(weights)
            };
            hop_records.push(ReferenceHop {
                debate_to_claim: (!dtc.is_empty()).then_some(dtc),
                fact_to_claim: (!ftc.is_empty()).then_some(ftc),
                across_claim: across,
                gate: (!gates.is_empty()).then_some(gates),
            });
        }

        // Judgment head.
        let jb = self.vector("judgment.bias");
        let claim_logits: Vec<Vector> = current
            .iter()
            .map(|c| {
                self.times(c, "judgment.weight")
                    .iter()
                    .zip(&jb)
                    .map(|(x, b)| x + b)
                    .collect()
            })
            .collect();
        let claim_probs: Vec<Vector> = claim_logits.iter().map(|l| softmax(l)).collect();

        // Losses.
        let floor = |p: f64| p.max(1e-12).ln();
        let claim_loss = case.gold_judgments.as_ref().map(|gold: &Vec<Judgment>| {
            let k = gold.len() as f64;
            -gold
                .iter()
                .zip(&claim_probs)
                .map(|(g, p)| floor(p[g.index()]))
                .sum::<f64>()
                / k
        });
        let fact_loss = match (&model_fact_probs, case.gold_facts) {
            (Some(probs), Some(gold)) => {
                let z = probs.len() as f64;
                Some(
                    -probs
                        .iter()
                        .zip(gold.0)
                        .map(|(&y, g)| if g { floor(y) } else { floor(1.0 - y) })
                        .sum::<f64>()
                        / z,
                )
            }
            _ => None,
        };
        let weight = self.model.config().fact_loss_weight;
        let total_loss = claim_loss.map(|c| c + fact_loss.map_or(0.0, |f| weight * f));

        ReferenceOutput {
            utterance_word_attention,
            claim_word_attention,
            utterances,
            memory,
            claims,
            debate_to_fact,
            model_fact_probs,
            fact_probs,
            hops: hop_records,
            refined_claims: current,
            claim_logits,
            claim_probs,
            claim_loss,
            fact_loss,
            total_loss,
        }
    }
}
