mod common;

use casejudge::autodiff::Tape;
use casejudge::corpus::{Case, Claim, Facts, Judgment, Role, Utterance};
use casejudge::encoders::{encode_claims, encode_dialogue, encode_utterances};
use casejudge::train::{evaluate_checkpoint, predict_all, train};
use casejudge::{Ablation, DropoutCtx, Model};
use common::{max_abs_diff, scrambled, small_train_config, tiny_config};

fn rows(tape: &Tape, v: casejudge::autodiff::Var) -> Vec<Vec<f64>> {
    let t = tape.value(v);
    (0..t.rows()).map(|i| t.row_slice(i).to_vec()).collect()
}

fn utterance_vectors(model: &Model, tokens: &[Vec<usize>], roles: &[Role]) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = model.params().bind_frozen(&mut tape);
    let ev = model.encoder_vars(&bound);
    let mask: Vec<Vec<bool>> = tokens.iter().map(|r| vec![true; r.len()]).collect();
    let (u, _) = encode_utterances(&mut tape, &ev, tokens, roles, &mask, &mut DropoutCtx::inference()).unwrap();
    rows(&tape, u)
}

#[test]
fn same_words_from_different_roles_encode_differently() {
    let model = scrambled(tiny_config(Ablation::default(), 1), 4, 0.5);
    let tokens = vec![vec![3, 5, 7, 2]; Role::ALL.len()];
    let u = utterance_vectors(&model, &tokens, Role::ALL);
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            assert!(
                max_abs_diff(&u[i..=i], &u[j..=j]) > 1e-6,
                "{:?} vs {:?}",
                Role::ALL[i],
                Role::ALL[j]
            );
        }
    }
    let no_role = Ablation {
        no_role: true,
        ..Default::default()
    };
    let blind = scrambled(tiny_config(no_role, 1), 4, 0.5);
    let u = utterance_vectors(&blind, &tokens, Role::ALL);
    assert!(u.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn reversing_the_debate_changes_the_dialogue_states() {
    let model = scrambled(tiny_config(Ablation::default(), 1), 6, 0.5);
    let tokens = [vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]];
    let roles = [Role::Judge, Role::Plaintiff, Role::Defendant, Role::Witness];
    let dialogue = |order: &[usize]| {
        let mut tape = Tape::new();
        let bound = model.params().bind_frozen(&mut tape);
        let ev = model.encoder_vars(&bound);
        let t: Vec<Vec<usize>> = order.iter().map(|&i| tokens[i].clone()).collect();
        let r: Vec<Role> = order.iter().map(|&i| roles[i]).collect();
        let mask = vec![vec![true; 2]; 4];
        let (u, _) = encode_utterances(&mut tape, &ev, &t, &r, &mask, &mut DropoutCtx::inference()).unwrap();
        let m = encode_dialogue(&mut tape, &ev, u, &[true; 4]).unwrap();
        (rows(&tape, u), rows(&tape, m))
    };
    let (u_fwd, m_fwd) = dialogue(&[0, 1, 2, 3]);
    let (u_rev, m_rev) = dialogue(&[3, 2, 1, 0]);
    for i in 0..4 {
        // The utterance vector itself does not depend on position...
        assert!(max_abs_diff(&u_fwd[i..=i], &u_rev[3 - i..=3 - i]) < 1e-12);
        // ...but its dialogue state does.
        assert!(
            max_abs_diff(&m_fwd[i..=i], &m_rev[3 - i..=3 - i]) > 1e-6,
            "utterance {i}"
        );
    }
}

#[test]
fn identical_claims_get_identical_vectors() {
    let model = scrambled(tiny_config(Ablation::default(), 1), 8, 0.5);
    let tokens = vec![vec![4, 9, 2], vec![5, 5, 0], vec![4, 9, 2]];
    let mask = vec![vec![true; 3], vec![true, true, false], vec![true; 3]];
    let mut tape = Tape::new();
    let bound = model.params().bind_frozen(&mut tape);
    let ev = model.encoder_vars(&bound);
    let (c, _) = encode_claims(&mut tape, &ev, &tokens, &mask, &mut DropoutCtx::inference()).unwrap();
    let c = rows(&tape, c);
    assert_eq!(c[0], c[2]);
    assert_ne!(c[0], c[1]);
}

/// Every word is the same; only the first speaker's role decides the verdict.
fn role_only_corpus(n: usize) -> Vec<Case> {
    (0..n)
        .map(|i| {
            let first = Role::ALL[i % Role::ALL.len()];
            let label = match first {
                Role::Defendant => Judgment::Reject,
                Role::Witness => Judgment::PartiallySupport,
                Role::Judge | Role::Plaintiff => Judgment::Support,
            };
            Case {
                case_id: format!("role-{i}"),
                claims: vec![Claim {
                    text: "repay the loan".into(),
                    kind: None,
                }],
                utterances: [first, Role::Judge]
                    .iter()
                    .map(|&role| Utterance {
                        role,
                        text: "the matter was argued".into(),
                    })
                    .collect(),
                facts: Facts::default(),
                judgments: vec![label],
            }
        })
        .collect()
}

#[test]
fn role_channel_alone_can_separate_a_role_only_corpus() {
    let cases = role_only_corpus(40);
    let single = Ablation {
        single_task: true,
        ..Default::default()
    };
    let config = casejudge::config::TrainConfig {
        target_micro_f1: Some(1.0),
        ..small_train_config(single, 200)
    };
    let outcome = train(&config, &cases, &cases, |_| {}).unwrap();
    let report = evaluate_checkpoint(&outcome.best, &cases).unwrap();
    assert_eq!(report.judgment.micro_f1, 1.0, "best epoch {}", outcome.best_epoch);

    // Without roles every case looks the same, so one label is predicted.
    let blind = Ablation {
        no_role: true,
        single_task: true,
        ..Default::default()
    };
    let outcome = train(&small_train_config(blind, 20), &cases, &cases, |_| {}).unwrap();
    let enc = casejudge::train::encode_all(&cases, &outcome.best.vocab, &outcome.best.limits).unwrap();
    let predictions: Vec<Judgment> = predict_all(&outcome.best.model, &enc).unwrap().concat();
    assert!(predictions.windows(2).all(|w| w[0] == w[1]));
}
