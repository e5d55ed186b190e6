#![allow(dead_code)]

pub mod reference;

use casejudge::autodiff::Tape;
use casejudge::corpus::{EncodedCase, Facts, Judgment, Role};
use casejudge::{Ablation, DropoutCtx, FactOverrides, ForwardTrace, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reference::ReferenceOutput;

pub const TINY_VOCAB: usize = 12;

pub fn tiny_config(ablation: Ablation, hops: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: TINY_VOCAB,
        word_dim: 3,
        role_dim: 2,
        hidden: 2,
        hops,
        ablation,
        ..Default::default()
    }
}

/// A model with weights drawn uniformly from `±scale`, large enough that
/// every pathway moves the output.
pub fn scrambled(config: ModelConfig, seed: u64, scale: f64) -> Model {
    let mut model = Model::new(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
    model
}

/// Random labelled case with `k` claims and `n` utterances of ragged length.
pub fn random_case(rng: &mut impl Rng, k: usize, n: usize, max_len: usize) -> EncodedCase {
    let mut grid = |rows: usize| -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
        let lens: Vec<usize> = (0..rows).map(|_| rng.gen_range(1..=max_len)).collect();
        let width = *lens.iter().max().unwrap();
        let ids = lens
            .iter()
            .map(|&len| {
                (0..width)
                    .map(|i| if i < len { rng.gen_range(2..TINY_VOCAB) } else { 0 })
                    .collect()
            })
            .collect();
        let mask = lens.iter().map(|&len| (0..width).map(|i| i < len).collect()).collect();
        (ids, mask)
    };
    let (utterance_tokens, word_mask) = grid(n);
    let (claim_tokens, claim_word_mask) = grid(k);
    let roles = (0..n).map(|_| Role::ALL[rng.gen_range(0..Role::ALL.len())]).collect();
    let facts = Facts::from_bits(rng.gen_range(0..1024));
    let judgments = (0..k).map(|_| Judgment::ALL[rng.gen_range(0..3)]).collect();
    EncodedCase {
        case_id: "random".into(),
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

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "row width");
            x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

pub fn max_abs_diff_vec(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

pub const ALL_ABLATIONS: [Ablation; 6] = [
    Ablation {
        no_role: false,
        no_utterance_memory: false,
        no_fact_memory: false,
        no_self_attention: false,
        single_task: false,
    },
    Ablation {
        no_role: true,
        no_utterance_memory: false,
        no_fact_memory: false,
        no_self_attention: false,
        single_task: false,
    },
    Ablation {
        no_role: false,
        no_utterance_memory: true,
        no_fact_memory: false,
        no_self_attention: false,
        single_task: false,
    },
    Ablation {
        no_role: false,
        no_utterance_memory: false,
        no_fact_memory: true,
        no_self_attention: false,
        single_task: false,
    },
    Ablation {
        no_role: false,
        no_utterance_memory: false,
        no_fact_memory: false,
        no_self_attention: true,
        single_task: false,
    },
    Ablation {
        no_role: false,
        no_utterance_memory: false,
        no_fact_memory: false,
        no_self_attention: false,
        single_task: true,
    },
];

/// Small, fast training setup over a synthetic corpus.
pub fn small_train_config(ablation: Ablation, epochs: usize) -> casejudge::config::TrainConfig {
    casejudge::config::TrainConfig {
        model: ModelConfig {
            word_dim: 6,
            role_dim: 3,
            hidden: 4,
            hops: 2,
            ablation,
            ..Default::default()
        },
        learning_rate: 4e-3,
        epochs,
        patience: 0,
        ..Default::default()
    }
}

/// Total, claim and fact loss of one case with dropout off.
pub fn losses(model: &Model, case: &EncodedCase) -> (f64, f64, Option<f64>) {
    let mut tape = Tape::new();
    let bound = model.params().bind_frozen(&mut tape);
    let vars = model
        .forward(
            &mut tape,
            &bound,
            case,
            &FactOverrides::none(),
            &mut DropoutCtx::inference(),
        )
        .unwrap();
    let (t, c, f) = model.loss_on(&mut tape, &vars, case).unwrap();
    (
        tape.value(t).item(),
        tape.value(c).item(),
        f.map(|f| tape.value(f).item()),
    )
}

/// Largest deviation between a library trace and the reference output.
pub fn trace_gap(trace: &ForwardTrace, r: &ReferenceOutput) -> f64 {
    let mut gap: f64 = 0.0;
    let mut both = |a: Option<&Vec<Vec<f64>>>, b: Option<&Vec<Vec<f64>>>, what: &str| match (a, b) {
        (Some(a), Some(b)) => gap = gap.max(max_abs_diff(a, b)),
        (None, None) => {}
        _ => panic!("{what} present on one side only"),
    };
    both(
        Some(&trace.utterance_word_attention),
        Some(&r.utterance_word_attention),
        "word attention",
    );
    both(
        Some(&trace.claim_word_attention),
        Some(&r.claim_word_attention),
        "claim attention",
    );
    both(
        trace.debate_to_fact.as_ref(),
        r.debate_to_fact.as_ref(),
        "debate-to-fact",
    );
    assert_eq!(trace.hops.len(), r.hops.len());
    for (h, rh) in trace.hops.iter().zip(&r.hops) {
        both(
            h.debate_to_claim.as_ref(),
            rh.debate_to_claim.as_ref(),
            "debate-to-claim",
        );
        both(h.fact_to_claim.as_ref(), rh.fact_to_claim.as_ref(), "fact-to-claim");
        both(h.across_claim.as_ref(), rh.across_claim.as_ref(), "across-claim");
        both(h.gate.as_ref(), rh.gate.as_ref(), "gate");
    }
    both(Some(&trace.claim_logits), Some(&r.claim_logits), "logits");
    both(Some(&trace.claim_probs), Some(&r.claim_probs), "probabilities");
    match (&trace.model_fact_probs, &r.model_fact_probs) {
        (Some(a), Some(b)) => gap = gap.max(max_abs_diff_vec(a, b)),
        (None, None) => {}
        _ => panic!("fact probabilities present on one side only"),
    }
    match (&trace.fact_probs, &r.fact_probs) {
        (Some(a), Some(b)) => gap = gap.max(max_abs_diff_vec(a, b)),
        (None, None) => {}
        _ => panic!("effective fact probabilities present on one side only"),
    }
    gap
}
