mod common;

use casejudge::checkpoint::{Checkpoint, CheckpointError};
use casejudge::corpus::{build_vocab, synth_generate, Limits, SynthProfile};
use casejudge::tensor::TensorError;
use casejudge::train::{encode_all, evaluate, evaluate_checkpoint, evaluate_encoded, predict_all, split_cases, train};
use casejudge::{Ablation, Model};
use common::{scrambled, small_train_config, tiny_config, ALL_ABLATIONS};
use proptest::prelude::*;

fn checkpoint_for(model: Model) -> Checkpoint {
    // A handful of cases, so the vocabulary misses words of larger corpora.
    let vocab = build_vocab(&synth_generate(3, 3, &SynthProfile::default()), 1);
    let config = casejudge::ModelConfig {
        vocab_size: vocab.len(),
        ..model.config().clone()
    };
    Checkpoint {
        model: scrambled(config, 5, 0.5),
        vocab,
        limits: Limits::default(),
    }
}

fn assert_bit_identical(a: &Model, b: &Model) {
    assert_eq!(a.config(), b.config());
    let (pa, pb): (Vec<_>, Vec<_>) = (a.params().iter().collect(), b.params().iter().collect());
    assert_eq!(pa.len(), pb.len());
    for ((na, ta), (nb, tb)) in pa.iter().zip(&pb) {
        assert_eq!(na, nb);
        assert_eq!(ta.shape(), tb.shape());
        let bits = |t: &casejudge::tensor::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ta), bits(tb), "parameter {na}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn json_round_trip_is_bit_exact(seed in any::<u64>(), variant in 0usize..6, hops in 1usize..4, scale in 1e-3f64..10.0) {
        let base = tiny_config(ALL_ABLATIONS[variant], hops);
        let mut ck = checkpoint_for(Model::new(base, 1).unwrap());
        ck.model = scrambled(ck.model.config().clone(), seed, scale);
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_bit_identical(&ck.model, &back.model);
        prop_assert_eq!(&back.vocab, &ck.vocab);
        prop_assert_eq!(back.limits, ck.limits);
        prop_assert_eq!(back.hash(), ck.hash());
    }
}

#[test]
fn save_load_evaluate_reproduces_identical_metrics() {
    let cases = synth_generate(21, 120, &SynthProfile::default());
    let splits = split_cases(&cases, [0.6, 0.2, 0.2], 21);
    let outcome = train(
        &small_train_config(Ablation::default(), 2),
        &splits.train,
        &splits.valid,
        |_| {},
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    outcome.best.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_bit_identical(&outcome.best.model, &loaded.model);
    let before = evaluate_checkpoint(&outcome.best, &splits.test).unwrap();
    let after = evaluate_checkpoint(&loaded, &splits.test).unwrap();
    assert_eq!(before, after);
    let enc = encode_all(&splits.test, &loaded.vocab, &loaded.limits).unwrap();
    assert_eq!(
        predict_all(&outcome.best.model, &enc).unwrap(),
        predict_all(&loaded.model, &enc).unwrap()
    );
}

#[test]
fn single_task_checkpoint_has_no_fact_parameters() {
    let single = Ablation {
        single_task: true,
        ..Default::default()
    };
    let ck = checkpoint_for(Model::new(tiny_config(single, 2), 1).unwrap());
    let json = ck.to_json();
    for name in ["fact.queries", "fact_head.", "gate.fact"] {
        assert!(!json.contains(name), "{name} present in single-task checkpoint");
    }
    let back = Checkpoint::from_json(&json).unwrap();
    assert!(back.model.params().iter().all(|(n, _)| !n.starts_with("fact")));
    let full = checkpoint_for(Model::new(tiny_config(Ablation::default(), 2), 1).unwrap());
    assert!(full.to_json().contains("fact_head."));
}

#[test]
fn unsupported_version_is_rejected() {
    let ck = checkpoint_for(Model::new(tiny_config(Ablation::default(), 1), 1).unwrap());
    let json = ck
        .to_json()
        .replacen("\"format_version\":1", "\"format_version\":99", 1);
    assert!(matches!(
        Checkpoint::from_json(&json),
        Err(CheckpointError::Version { found: 99 })
    ));
}

#[test]
fn malformed_checkpoints_are_rejected() {
    let ck = checkpoint_for(Model::new(tiny_config(Ablation::default(), 1), 1).unwrap());
    let json = ck.to_json();
    assert!(matches!(
        Checkpoint::from_json(&json[..json.len() / 2]),
        Err(CheckpointError::Format(_))
    ));
    let missing = json.replacen("\"name\":\"utterance.query", "\"name\":\"renamed", 1);
    assert!(Checkpoint::from_json(&missing).is_err());
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        Checkpoint::load(dir.path().join("absent.json")),
        Err(CheckpointError::Io(_))
    ));
}

#[test]
fn evaluating_with_a_mismatched_vocabulary_is_a_contract_error() {
    let cases = synth_generate(8, 60, &SynthProfile::default());
    let ck = checkpoint_for(Model::new(tiny_config(Ablation::default(), 1), 1).unwrap());
    let own = encode_all(&cases, &ck.vocab, &ck.limits).unwrap();
    assert!(evaluate_encoded(&ck, &own, &ck.vocab).is_ok());

    let other = build_vocab(&cases, 1);
    assert_ne!(other, ck.vocab);
    let foreign = encode_all(&cases, &other, &ck.limits).unwrap();
    assert!(matches!(
        evaluate_encoded(&ck, &foreign, &other),
        Err(TensorError::Contract(_))
    ));
    // Token ids beyond the embedding table are refused by the model itself.
    assert!(other.len() > ck.vocab.len());
    assert!(matches!(evaluate(&ck.model, &foreign), Err(TensorError::Contract(_))));
}
