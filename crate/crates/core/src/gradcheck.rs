//! Central finite-difference checks of tape gradients.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{EncodedCase, Facts, Judgment, Role};
use crate::heads::predict_facts;
use crate::interaction::{build_fact_memory, debate_to_fact, run_hops, FusionVars, HopFlags};
use crate::model::{DropoutCtx, FactOverrides, Model, ModelConfig};
use crate::nn::{attention_pool, lstm_cell, run_bilstm};
use crate::tensor::{Result, Tensor};

pub const STEP: f64 = 1e-6;
/// Gradients smaller than this are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, MAGNITUDE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Largest relative error between tape gradients and central differences
/// for a scalar function of the given inputs.
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = values.iter().map(|v| t.constant(v.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).item())
    };
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v);
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            probe[i].data_mut()[j] = x + STEP;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = x - STEP;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-scale..scale);
    }
    t
}

/// Reduces a tensor to a scalar with fixed random weights, so every output
/// entry influences the loss differently.
fn weighted_sum(tape: &mut Tape, v: Var, rng_seed: u64) -> Result<Var> {
    let n = tape.value(v).numel();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let m = tape.mul_const(v, w)?;
    Ok(tape.sum(m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub seeds: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

type Primitive = (
    &'static str,
    fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    fn(&mut Tape, &[Var], u64) -> Result<Var>,
);

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=8))
}

fn primitives() -> Vec<Primitive> {
    vec![
        (
            "matmul",
            |r| {
                let (m, k, n) = dims(r);
                vec![random(r, &[m, k], 1.0), random(r, &[k, n], 1.0)]
            },
            |t, v, s| {
                let o = t.matmul(v[0], v[1])?;
                weighted_sum(t, o, s)
            },
        ),
        (
            "add_mul",
            |r| {
                let (m, n, _) = dims(r);
                vec![random(r, &[m, n], 1.0), random(r, &[m, n], 1.0)]
            },
            |t, v, s| {
                let a = t.add(v[0], v[1])?;
                let o = t.mul(a, v[1])?;
                weighted_sum(t, o, s)
            },
        ),
        (
            "add_row_mul_col",
            |r| {
                let (m, n, _) = dims(r);
                vec![
                    random(r, &[m, n], 1.0),
                    random(r, &[1, n], 1.0),
                    random(r, &[m, 1], 1.0),
                ]
            },
            |t, v, s| {
                let a = t.add_row(v[0], v[1])?;
                let o = t.mul_col(a, v[2])?;
                weighted_sum(t, o, s)
            },
        ),
        (
            "sigmoid_tanh_relu",
            |r| {
                let (m, n, _) = dims(r);
                vec![random(r, &[m, n], 2.0)]
            },
            |t, v, s| {
                let a = t.sigmoid(v[0]);
                let b = t.tanh(v[0]);
                let c = t.relu(v[0]);
                let ab = t.add(a, b)?;
                let o = t.add(ab, c)?;
                weighted_sum(t, o, s)
            },
        ),
        (
            "log_affine",
            |r| {
                let (m, n, _) = dims(r);
                let mut x = random(r, &[m, n], 0.45);
                x.data_mut().iter_mut().for_each(|v| *v += 0.5);
                vec![x]
            },
            |t, v, s| {
                let a = t.affine(v[0], -1.0, 1.0);
                let o = t.log_clamped(a, 1e-12);
                weighted_sum(t, o, s)
            },
        ),
        (
            "masked_softmax",
            |r| {
                let (m, n, _) = dims(r);
                vec![random(r, &[m, n], 3.0)]
            },
            |t, v, s| {
                let n = t.shape(v[0])[1];
                let m = t.shape(v[0])[0];
                let mask: Vec<bool> = (0..m * n)
                    .map(|i| i % n == 0 || !(i + s as usize).is_multiple_of(3))
                    .collect();
                let o = t.masked_softmax(v[0], Some(&mask))?;
                weighted_sum(t, o, s)
            },
        ),
        (
            "concat_slice_gather",
            |r| {
                let (m, n, k) = dims(r);
                vec![random(r, &[m, n], 1.0), random(r, &[m, k], 1.0)]
            },
            |t, v, s| {
                let c = t.concat_cols(&[v[0], v[1]])?;
                let (m, w) = (t.shape(c)[0], t.shape(c)[1]);
                let sl = t.slice_cols(c, w / 2, w)?;
                let rows = t.concat_rows(&[sl, sl])?;
                let idx: Vec<usize> = (0..m + 1).map(|i| (i * 7 + s as usize) % (2 * m)).collect();
                let g = t.gather_rows(rows, &idx)?;
                let tr = t.transpose(g)?;
                let sc = t.sum_cols(tr);
                weighted_sum(t, sc, s)
            },
        ),
        (
            "blend_rows",
            |r| {
                let (m, n, _) = dims(r);
                vec![random(r, &[m, n], 1.0), random(r, &[m, n], 1.0)]
            },
            |t, v, s| {
                let m = t.shape(v[0])[0];
                let take: Vec<bool> = (0..m).map(|i| (i + s as usize).is_multiple_of(2)).collect();
                let o = t.blend_rows(v[0], v[1], &take)?;
                weighted_sum(t, o, s)
            },
        ),
        (
            "lstm_cell",
            |r| {
                vec![
                    random(r, &[1, 3], 1.0),
                    random(r, &[1, 2], 1.0),
                    random(r, &[1, 2], 1.0),
                    random(r, &[3, 8], 0.5),
                    random(r, &[2, 8], 0.5),
                    random(r, &[1, 8], 0.5),
                ]
            },
            |t, v, s| {
                let p = crate::nn::LstmVars {
                    input_weight: v[3],
                    hidden_weight: v[4],
                    bias: v[5],
                    hidden: 2,
                };
                let (h, c) = lstm_cell(t, v[0], v[1], v[2], &p)?;
                let both = t.concat_cols(&[h, c])?;
                weighted_sum(t, both, s)
            },
        ),
        (
            "bilstm_attention_pool",
            |r| {
                vec![
                    random(r, &[3 * 2, 3], 1.0),
                    random(r, &[3, 8], 0.5),
                    random(r, &[2, 8], 0.5),
                    random(r, &[1, 8], 0.5),
                    random(r, &[3, 8], 0.5),
                    random(r, &[2, 8], 0.5),
                    random(r, &[1, 8], 0.5),
                    random(r, &[4, 1], 1.0),
                ]
            },
            |t, v, s| {
                let lv = |a: usize| crate::nn::LstmVars {
                    input_weight: v[a],
                    hidden_weight: v[a + 1],
                    bias: v[a + 2],
                    hidden: 2,
                };
                let mask = vec![vec![true, true], vec![true, s % 2 == 0], vec![true, false]];
                let states = run_bilstm(t, v[0], 2, &mask, &lv(1), &lv(4))?;
                let (pooled, _) = attention_pool(t, &states, v[7], &mask)?;
                weighted_sum(t, pooled, s)
            },
        ),
        (
            // Two claims, three utterances, three facts, width 4, two hops.
            "fact_memory_hops",
            |r| {
                vec![
                    random(r, &[2, 4], 1.0),
                    random(r, &[3, 4], 1.0),
                    random(r, &[3, 4], 1.0),
                    random(r, &[3, 4], 1.0),
                    random(r, &[3, 1], 1.0),
                    random(r, &[4, 4], 0.7),
                    random(r, &[4, 4], 0.7),
                    random(r, &[1, 4], 0.7),
                    random(r, &[4, 4], 0.7),
                    random(r, &[1, 4], 0.7),
                ]
            },
            |t, v, s| {
                let (facts, _) = debate_to_fact(t, v[1], v[2], &[true; 3])?;
                let (_, probs) = predict_facts(t, facts, v[3], v[4])?;
                let memory = build_fact_memory(t, facts, probs)?;
                let fusion = FusionVars {
                    gate_utterance: Some(v[5]),
                    gate_fact: Some(v[6]),
                    gate_bias: Some(v[7]),
                    fusion_weight: v[8],
                    fusion_bias: v[9],
                };
                let flags = HopFlags {
                    utterance_memory: true,
                    fact_memory: true,
                    self_attention: true,
                };
                let (out, _) = run_hops(t, v[0], v[1], &[true; 3], Some(memory), &[true; 2], &fusion, flags, 2)?;
                weighted_sum(t, out, s)
            },
        ),
    ]
}

/// A tiny labelled case with `k` claims and `n` utterances.
pub fn tiny_case(rng: &mut ChaCha8Rng, vocab: usize, k: usize, n: usize) -> EncodedCase {
    let mut grid = |rows: usize, width: usize| -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
        let mut ids = Vec::new();
        let mut mask = Vec::new();
        for _ in 0..rows {
            let len = rng.gen_range(1..=width);
            ids.push(
                (0..width)
                    .map(|i| if i < len { rng.gen_range(2..vocab) } else { 0 })
                    .collect(),
            );
            mask.push((0..width).map(|i| i < len).collect());
        }
        (ids, mask)
    };
    let (utterance_tokens, word_mask) = grid(n, 3);
    let (claim_tokens, claim_word_mask) = grid(k, 3);
    let roles = (0..n).map(|_| Role::ALL[rng.gen_range(0..Role::ALL.len())]).collect();
    let facts = Facts::from_bits(rng.gen_range(0..1024));
    let judgments = (0..k).map(|_| Judgment::ALL[rng.gen_range(0..3)]).collect();
    EncodedCase {
        case_id: "gradcheck".into(),
        utterance_tokens,
        word_mask,
        roles,
        utterance_mask: vec![true; n],
        claim_tokens,
        claim_word_mask,
        claim_mask: vec![true; k],
        gold_facts: Some(facts),
        gold_judgments: Some(judgments),
    }
}

/// Total loss of `model` on `case` with dropout off.
pub fn model_loss(model: &Model, case: &EncodedCase) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.params().bind_frozen(&mut tape);
    let vars = model.forward(
        &mut tape,
        &bound,
        case,
        &FactOverrides::none(),
        &mut DropoutCtx::inference(),
    )?;
    let (loss, _, _) = model.loss_on(&mut tape, &vars, case)?;
    Ok(tape.value(loss).item())
}

/// Checks `coords` randomly chosen parameter coordinates (all when `None`).
pub fn check_model(model: &Model, case: &EncodedCase, coords: Option<usize>, seed: u64) -> Result<f64> {
    let g = model.case_gradients(case, &mut DropoutCtx::inference())?;
    let mut probe = model.clone();
    let ids: Vec<_> = model.params().ids().collect();
    let mut all: Vec<(usize, usize)> = Vec::new();
    for (pi, id) in ids.iter().enumerate() {
        for j in 0..model.params().get(*id).numel() {
            all.push((pi, j));
        }
    }
    let chosen: Vec<(usize, usize)> = match coords {
        None => all,
        Some(c) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..c).map(|_| all[rng.gen_range(0..all.len())]).collect()
        }
    };
    let mut worst: f64 = 0.0;
    for (pi, j) in chosen {
        let id = ids[pi];
        let x = model.params().get(id).data()[j];
        probe.params_mut().get_mut(id).data_mut()[j] = x + STEP;
        let plus = model_loss(&probe, case)?;
        probe.params_mut().get_mut(id).data_mut()[j] = x - STEP;
        let minus = model_loss(&probe, case)?;
        probe.params_mut().get_mut(id).data_mut()[j] = x;
        let numeric = (plus - minus) / (2.0 * STEP);
        worst = worst.max(relative_error(g.grads[pi].data()[j], numeric));
    }
    Ok(worst)
}

/// Configuration of the composed-model check: two claims, three
/// utterances, hidden size 2, two hops.
pub fn tiny_model(seed: u64) -> Result<Model> {
    let config = ModelConfig {
        vocab_size: 8,
        word_dim: 2,
        role_dim: 2,
        hidden: 2,
        hops: 2,
        ..Default::default()
    };
    let mut m = Model::new(config, seed)?;
    // Larger weights than the default initialisation make every pathway
    // contribute visibly to the loss.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let ids: Vec<_> = m.params().ids().collect();
    for id in ids {
        for v in m.params_mut().get_mut(id).data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    Ok(m)
}

/// Runs every primitive and the composed model over `seeds` seeds.
pub fn run(seeds: u64, tolerance: f64) -> Result<GradcheckReport> {
    let started = Instant::now();
    let mut checks = Vec::new();
    for (name, make, f) in primitives() {
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = make(&mut rng);
            worst = worst.max(check(&inputs, |t, v| f(t, v, seed))?);
        }
        checks.push(CheckResult {
            name: name.into(),
            seeds: seeds as usize,
            max_relative_error: worst,
            passed: worst < tolerance,
        });
    }
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let model = tiny_model(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = tiny_case(&mut rng, 8, 2, 3);
        worst = worst.max(check_model(&model, &case, None, seed)?);
    }
    checks.push(CheckResult {
        name: "composed_model".into(),
        seeds: seeds as usize,
        max_relative_error: worst,
        passed: worst < tolerance,
    });
    Ok(GradcheckReport {
        tolerance,
        step: STEP,
        checks,
        seconds: started.elapsed().as_secs_f64(),
    })
}
