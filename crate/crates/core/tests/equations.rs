mod common;

use casejudge::autodiff::Tape;
use casejudge::corpus::FactLabel;
use casejudge::interaction::{run_hops, FusionVars, HopFlags};
use casejudge::tensor::Tensor;
use casejudge::{Ablation, DropoutCtx, FactOverrides};
use common::reference::Reference;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

#[test]
fn library_forward_matches_reference_on_fifty_seeds() {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=4);
        let case = random_case(&mut rng, k, n, 4);
        for (i, &ablation) in ALL_ABLATIONS.iter().enumerate() {
            let hops = 1 + (seed as usize + i) % 3;
            let model = scrambled(tiny_config(ablation, hops), seed * 10 + i as u64, 0.9);
            let trace = model.infer(&case, &FactOverrides::none()).unwrap();
            let r = Reference::new(&model).forward(&case, &[]);
            worst = worst.max(trace_gap(&trace, &r));
            let (total, claim, fact) = losses(&model, &case);
            worst = worst.max((total - r.total_loss.unwrap()).abs());
            worst = worst.max((claim - r.claim_loss.unwrap()).abs());
            match (fact, r.fact_loss) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => assert!(ablation.single_task),
                _ => panic!("fact loss present on one side only"),
            }
        }
    }
    assert!(worst < TOL, "max deviation {worst:e}");
}

#[test]
fn overridden_forward_matches_reference() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let case = random_case(&mut rng, 2, 3, 3);
        let model = scrambled(tiny_config(Ablation::default(), 2), seed, 0.9);
        let mut overrides = FactOverrides::none();
        let mut raw = vec![None; 10];
        for &label in FactLabel::ALL {
            if rng.gen_bool(0.5) {
                continue;
            }
            let v: f64 = rng.gen_range(0.0..=1.0);
            overrides.set(label, v).unwrap();
            raw[label.index()] = Some(v);
        }
        let trace = model.infer(&case, &overrides).unwrap();
        let r = Reference::new(&model).forward(&case, &raw);
        assert!(trace_gap(&trace, &r) < TOL);
    }
}

#[test]
fn padding_extension_leaves_outputs_unchanged() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (k, n) = (rng.gen_range(1..=3), rng.gen_range(1..=4));
        let case = random_case(&mut rng, k, n, 4);
        let ablation = ALL_ABLATIONS[seed as usize % ALL_ABLATIONS.len()];
        let model = scrambled(tiny_config(ablation, 2), seed, 0.9);
        let (n, l, k, q) = case.dims();
        let padded = case.padded(n + 1 + seed as usize % 3, l + 2, k + 1 + seed as usize % 2, q + 3);
        let a = model.infer(&case, &FactOverrides::none()).unwrap();
        let b = model.infer(&padded, &FactOverrides::none()).unwrap();
        let r = Reference::new(&model).forward(&case, &[]);
        assert!(trace_gap(&a, &r) < TOL);
        assert!(trace_gap(&b, &r) < TOL, "padded trace drifted");
        let (la, _, _) = losses(&model, &case);
        let (lb, _, _) = losses(&model, &padded);
        assert!((la - lb).abs() < TOL);
    }
}

#[test]
fn tape_gradients_match_reference_finite_differences() {
    const STEP: f64 = 1e-6;
    let mut worst: f64 = 0.0;
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let case = random_case(&mut rng, 2, 3, 3);
        let ablation = ALL_ABLATIONS[seed as usize % ALL_ABLATIONS.len()];
        let model = scrambled(tiny_config(ablation, 2), seed, 0.8);
        let grads = model.case_gradients(&case, &mut DropoutCtx::inference()).unwrap().grads;
        let ids: Vec<_> = model.params().ids().collect();
        let mut probe = model.clone();
        for (pi, &id) in ids.iter().enumerate() {
            for j in 0..model.params().get(id).numel() {
                let x = model.params().get(id).data()[j];
                probe.params_mut().get_mut(id).data_mut()[j] = x + STEP;
                let plus = Reference::new(&probe).forward(&case, &[]).total_loss.unwrap();
                probe.params_mut().get_mut(id).data_mut()[j] = x - STEP;
                let minus = Reference::new(&probe).forward(&case, &[]).total_loss.unwrap();
                probe.params_mut().get_mut(id).data_mut()[j] = x;
                let numeric = (plus - minus) / (2.0 * STEP);
                let analytic = grads[pi].data()[j];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
                worst = worst.max(rel);
            }
        }
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn total_loss_gradient_is_sum_of_part_gradients() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let case = random_case(&mut rng, 2, 3, 3);
        let model = scrambled(tiny_config(Ablation::default(), 2), seed, 0.8);
        let part = |which: usize| -> Vec<Tensor> {
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let vars = model
                .forward(
                    &mut tape,
                    &bound,
                    &case,
                    &FactOverrides::none(),
                    &mut DropoutCtx::inference(),
                )
                .unwrap();
            let (total, claim, fact) = model.loss_on(&mut tape, &vars, &case).unwrap();
            let target = [total, claim, fact.unwrap()][which];
            let g = tape.backward(target).unwrap();
            bound.grads(&g)
        };
        let (total, claim, fact) = (part(0), part(1), part(2));
        for ((t, c), f) in total.iter().zip(&claim).zip(&fact) {
            for ((a, b), d) in t.data().iter().zip(c.data()).zip(f.data()) {
                assert!((a - (b + d)).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn three_hops_equal_three_single_hops() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let mut random = |rows: usize, cols: usize| {
            Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let values = [
            random(3, 4),
            random(5, 4),
            random(6, 4),
            random(4, 4),
            random(4, 4),
            random(1, 4),
            random(4, 4),
            random(1, 4),
        ];
        let mut tape = Tape::new();
        let v: Vec<_> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let fusion = FusionVars {
            gate_utterance: Some(v[3]),
            gate_fact: Some(v[4]),
            gate_bias: Some(v[5]),
            fusion_weight: v[6],
            fusion_bias: v[7],
        };
        let flags = HopFlags {
            utterance_memory: true,
            fact_memory: true,
            self_attention: true,
        };
        let utt_mask = [true, true, true, true, false];
        let claim_mask = [true, true, false];
        let (three, records) = run_hops(
            &mut tape,
            v[0],
            v[1],
            &utt_mask,
            Some(v[2]),
            &claim_mask,
            &fusion,
            flags,
            3,
        )
        .unwrap();
        assert_eq!(records.len(), 3);
        let mut current = v[0];
        for _ in 0..3 {
            let (next, _) = run_hops(
                &mut tape,
                current,
                v[1],
                &utt_mask,
                Some(v[2]),
                &claim_mask,
                &fusion,
                flags,
                1,
            )
            .unwrap();
            current = next;
        }
        let diff = tape.value(three).max_abs_diff(tape.value(current));
        assert!(diff < 1e-12, "{diff:e}");
    }
}

#[test]
fn fact_override_to_one_reads_that_fact_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let case = random_case(&mut rng, 2, 4, 3);
    let model = scrambled(tiny_config(Ablation::default(), 1), 3, 0.9);
    let mut overrides = FactOverrides::all(0.0);
    overrides.set(FactLabel::InterestDispute, 1.0).unwrap();
    let trace = model.infer(&case, &overrides).unwrap();
    let p = FactLabel::InterestDispute.index();
    let alpha = trace.fact_to_claim().unwrap();
    let r = Reference::new(&model).forward(&case, &overrides.0);
    // Every other slot of the fact memory is the zero vector, so each claim's
    // fact read is α_jp times the fact vector of the overridden label.
    let dtf = r.debate_to_fact.as_ref().unwrap();
    let fact_vector: Vec<f64> = {
        let weights = &dtf[p];
        let mut out = vec![0.0; r.memory[0].len()];
        for (w, m) in weights.iter().zip(&r.memory) {
            for (o, x) in out.iter_mut().zip(m) {
                *o += w * x;
            }
        }
        out
    };
    for (j, row) in alpha.iter().enumerate() {
        let claim = &r.claims[j];
        let score_p: f64 = claim.iter().zip(&fact_vector).map(|(c, f)| c * f).sum();
        // Nine zero slots score 0; the overridden slot scores c·f_p.
        let denom = score_p.exp() + 9.0;
        for (q, &a) in row.iter().enumerate() {
            let expected = if q == p { score_p.exp() / denom } else { 1.0 / denom };
            assert!((a - expected).abs() < 1e-12);
        }
    }
}
