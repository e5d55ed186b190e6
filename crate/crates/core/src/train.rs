//! Training loop, evaluation, ablation runs and the hop sweep.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::corpus::{build_vocab, encode_case, Case, CorpusError, EncodedCase, Judgment, Limits, Vocabulary};
use crate::metrics::{ConfusionMatrix, FactMetrics, FactTally, JudgmentMetrics};
use crate::model::{Ablation, DropoutCtx, FactOverrides, Model, ModelConfig};
use crate::optim::{clip_global_norm, AdamConfig, AdamState};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training diverged at epoch {epoch}, batch {batch}: {msg}")]
    Divergence { epoch: usize, batch: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Case>,
    pub valid: Vec<Case>,
    pub test: Vec<Case>,
}

/// Seeded shuffle, then consecutive slices with the given fractions.
pub fn split_cases(cases: &[Case], fractions: [f64; 3], seed: u64) -> Splits {
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = cases.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_valid = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let pick = |range: std::ops::Range<usize>| order[range].iter().map(|&i| cases[i].clone()).collect();
    Splits {
        train: pick(0..n_train),
        valid: pick(n_train..n_train + n_valid),
        test: pick(n_train + n_valid..n),
    }
}

/// Fold `fold` of `k` as test, the next fold as validation, the rest as
/// training data, after one seeded shuffle shared by every fold.
pub fn kfold_splits(cases: &[Case], k: usize, fold: usize, seed: u64) -> Result<Splits, TrainError> {
    if k < 3 || fold >= k || cases.len() < k {
        return Err(TrainError::Config(format!(
            "k-fold needs 3 <= k <= number of cases and fold < k (k {k}, fold {fold}, cases {})",
            cases.len()
        )));
    }
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of = |position: usize| position * k / cases.len();
    let valid_fold = (fold + 1) % k;
    let mut splits = Splits {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for (position, &i) in order.iter().enumerate() {
        let f = fold_of(position);
        let target = if f == fold {
            &mut splits.test
        } else if f == valid_fold {
            &mut splits.valid
        } else {
            &mut splits.train
        };
        target.push(cases[i].clone());
    }
    Ok(splits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub judgment: JudgmentMetrics,
    pub facts: Option<FactMetrics>,
}

pub fn encode_all(cases: &[Case], vocab: &Vocabulary, limits: &Limits) -> Result<Vec<EncodedCase>, CorpusError> {
    cases.iter().map(|c| encode_case(c, vocab, limits)).collect()
}

/// Claim metrics pooled over every claim, fact metrics pooled over cases.
pub fn evaluate(model: &Model, cases: &[EncodedCase]) -> Result<EvalReport, TensorError> {
    let mut confusion = ConfusionMatrix::default();
    let mut tally = FactTally::default();
    let mut any_facts = false;
    for case in cases {
        let gold = case
            .gold_judgments
            .as_ref()
            .ok_or_else(|| TensorError::Contract(format!("case `{}` has no gold judgments", case.case_id)))?;
        let trace = model.infer(case, &FactOverrides::none())?;
        for (g, p) in gold.iter().zip(trace.predictions()) {
            confusion.add(*g, p);
        }
        if let (Some(pred), Some(gold)) = (trace.fact_predictions(), case.gold_facts) {
            tally.add(&gold.0, &pred);
            any_facts = true;
        }
    }
    Ok(EvalReport {
        judgment: JudgmentMetrics::from_confusion(confusion),
        facts: any_facts.then(|| tally.finish()),
    })
}

/// Evaluates a checkpoint on raw cases, encoding them with its vocabulary.
pub fn evaluate_checkpoint(ck: &Checkpoint, cases: &[Case]) -> Result<EvalReport, TrainError> {
    let encoded = encode_all(cases, &ck.vocab, &ck.limits)?;
    Ok(evaluate(&ck.model, &encoded)?)
}

/// Evaluates cases that were encoded with `encoded_with`, which must be the
/// checkpoint's own vocabulary.
pub fn evaluate_encoded(
    ck: &Checkpoint,
    cases: &[EncodedCase],
    encoded_with: &Vocabulary,
) -> Result<EvalReport, TensorError> {
    if encoded_with != &ck.vocab {
        return Err(TensorError::Contract(format!(
            "cases were encoded with a different vocabulary ({} tokens) than the checkpoint's ({} tokens)",
            encoded_with.len(),
            ck.vocab.len()
        )));
    }
    evaluate(&ck.model, cases)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_claim_loss: f64,
    pub train_fact_loss: Option<f64>,
    pub valid: EvalReport,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation micro F1.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub epochs: Vec<EpochReport>,
}

impl TrainOutcome {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

fn dropout_seed(seed: u64, epoch: usize, position: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (epoch as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (position as u64).wrapping_mul(0x94D0_49BB_1331_11EB)
}

/// Trains on `train`, selecting the epoch with the best validation micro F1.
/// `on_epoch` sees every epoch report as it is produced.
pub fn train(
    config: &TrainConfig,
    train: &[Case],
    valid: &[Case],
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome, TrainError> {
    config.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    if train.is_empty() {
        return Err(TrainError::Config("training corpus is empty".into()));
    }
    if valid.is_empty() {
        return Err(TrainError::Config("validation corpus is empty".into()));
    }
    let vocab = build_vocab(train, config.min_count);
    let model_config = ModelConfig {
        vocab_size: vocab.len(),
        ..config.model.clone()
    };
    let mut model = Model::new(model_config, config.seed)?;
    let train_enc = encode_all(train, &vocab, &config.limits)?;
    let valid_enc = encode_all(valid, &vocab, &config.limits)?;
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED);
    let mut order: Vec<usize> = (0..train_enc.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut claim_sum, mut fact_sum) = (0.0, 0.0, 0.0);
        let mut has_fact = false;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = batch_index + 1;
            let mut acc: Vec<Tensor> = model.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
            for &i in chunk {
                let case = &train_enc[i];
                let mut dropout = DropoutCtx::training(
                    model.config().drop_rate,
                    model.config().dropout_sites,
                    dropout_seed(config.seed, epoch, i),
                );
                let g = model.case_gradients(case, &mut dropout)?;
                if !g.loss.is_finite() {
                    return Err(TrainError::Divergence {
                        epoch,
                        batch,
                        msg: format!("non-finite loss {} on case `{}`", g.loss, case.case_id),
                    });
                }
                loss_sum += g.loss;
                claim_sum += g.claim_loss;
                if let Some(f) = g.fact_loss {
                    fact_sum += f;
                    has_fact = true;
                }
                for (a, gi) in acc.iter_mut().zip(&g.grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(gi.data()) {
                        *x += y;
                    }
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            for a in &mut acc {
                a.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            clip_global_norm(&mut acc, config.clip_norm);
            adam.step(model.params_mut(), &acc)
                .map_err(|e| TrainError::Divergence {
                    epoch,
                    batch,
                    msg: e.to_string(),
                })?;
        }
        let n = train_enc.len() as f64;
        let valid_report = evaluate(&model, &valid_enc)?;
        let report = EpochReport {
            epoch,
            train_loss: loss_sum / n,
            train_claim_loss: claim_sum / n,
            train_fact_loss: has_fact.then_some(fact_sum / n),
            valid: valid_report,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&report);
        let micro = report.valid.judgment.micro_f1;
        epochs.push(report);
        if best.as_ref().is_none_or(|(b, _, _)| micro > *b) {
            best = Some((micro, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        if config.target_micro_f1.is_some_and(|t| micro >= t) {
            break;
        }
        if config.patience > 0 && stale >= config.patience {
            break;
        }
    }
    let (_, best_epoch, best_model) = best.ok_or_else(|| TrainError::Config("no epochs were run".into()))?;
    Ok(TrainOutcome {
        best: Checkpoint {
            model: best_model,
            vocab,
            limits: config.limits,
        },
        best_epoch,
        epochs,
    })
}

/// The four single-component ablations compared against the full model.
pub fn standard_ablations() -> Vec<Ablation> {
    vec![
        Ablation {
            no_role: true,
            ..Default::default()
        },
        Ablation {
            no_utterance_memory: true,
            ..Default::default()
        },
        Ablation {
            no_fact_memory: true,
            ..Default::default()
        },
        Ablation {
            no_self_attention: true,
            ..Default::default()
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seeds: Vec<u64>,
    /// Test micro F1 per seed.
    pub micro_f1: Vec<f64>,
    pub macro_f1: Vec<f64>,
    pub median_micro_f1: f64,
    pub median_macro_f1: f64,
    /// Relative increase in error against the full model on median micro
    /// F1: `(F1_full − F1) / (1 − F1_full)`; absent when the full model
    /// makes no errors.
    pub rie_micro: Option<f64>,
    pub rie_macro: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rie_definition: String,
    pub rows: Vec<AblationRow>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn rie(full: f64, other: f64) -> Option<f64> {
    (full < 1.0).then(|| (full - other) / (1.0 - full))
}

/// Trains one configuration per seed and returns the test reports.
pub fn train_seeds(config: &TrainConfig, splits: &Splits, seeds: &[u64]) -> Result<Vec<EvalReport>, TrainError> {
    seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..config.clone() };
            let outcome = train(&cfg, &splits.train, &splits.valid, |_| {})?;
            evaluate_checkpoint(&outcome.best, &splits.test)
        })
        .collect()
}

/// Builds an ablation row from per-seed test reports.
pub fn ablation_row(variant: String, seeds: &[u64], reports: &[EvalReport], full: Option<(f64, f64)>) -> AblationRow {
    let micro: Vec<f64> = reports.iter().map(|r| r.judgment.micro_f1).collect();
    let macro_: Vec<f64> = reports.iter().map(|r| r.judgment.macro_f1).collect();
    let (mi, ma) = (median(&micro), median(&macro_));
    let (full_mi, full_ma) = full.unwrap_or((mi, ma));
    AblationRow {
        variant,
        seeds: seeds.to_vec(),
        micro_f1: micro,
        macro_f1: macro_,
        median_micro_f1: mi,
        median_macro_f1: ma,
        rie_micro: rie(full_mi, mi),
        rie_macro: rie(full_ma, ma),
    }
}

/// Full model plus each ablation in `variants`, identical splits and seeds.
pub fn run_ablations(
    config: &TrainConfig,
    splits: &Splits,
    variants: &[Ablation],
    seeds: &[u64],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationTable, TrainError> {
    let mut base = config.clone();
    base.model.ablation = Ablation::default();
    let full_reports = train_seeds(&base, splits, seeds)?;
    let full_row = ablation_row("full".into(), seeds, &full_reports, None);
    on_row(&full_row);
    let full = (full_row.median_micro_f1, full_row.median_macro_f1);
    let mut rows = vec![full_row];
    for &ablation in variants {
        let mut cfg = config.clone();
        cfg.model.ablation = ablation;
        let reports = train_seeds(&cfg, splits, seeds)?;
        let row = ablation_row(ablation.name(), seeds, &reports, Some(full));
        on_row(&row);
        rows.push(row);
    }
    Ok(AblationTable {
        rie_definition: "RIE = (F1_full - F1_variant) / (1 - F1_full), from median test F1 over seeds".into(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopRow {
    pub hops: usize,
    pub parameters: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub fact_micro_f1: Option<f64>,
    pub best_epoch: usize,
    pub train_seconds: f64,
    /// Mean forward-pass time per test case, best of several repetitions.
    pub inference_ms_per_case: f64,
}

/// Times inference over `cases`, taking the fastest of `reps` passes after
/// one untimed warm-up pass.
pub fn time_inference(model: &Model, cases: &[EncodedCase], reps: usize) -> Result<f64, TensorError> {
    for case in cases {
        model.infer(case, &FactOverrides::none())?;
    }
    let mut best = f64::INFINITY;
    for _ in 0..reps.max(1) {
        let started = Instant::now();
        for case in cases {
            model.infer(case, &FactOverrides::none())?;
        }
        best = best.min(started.elapsed().as_secs_f64());
    }
    Ok(best * 1000.0 / cases.len().max(1) as f64)
}

/// Trains and evaluates one model per hop count.
pub fn hop_sweep(
    config: &TrainConfig,
    splits: &Splits,
    hops: impl IntoIterator<Item = usize>,
    mut on_row: impl FnMut(&HopRow),
) -> Result<Vec<HopRow>, TrainError> {
    let mut rows = Vec::new();
    for t in hops {
        let mut cfg = config.clone();
        cfg.model.hops = t;
        let started = Instant::now();
        let outcome = train(&cfg, &splits.train, &splits.valid, |_| {})?;
        let train_seconds = started.elapsed().as_secs_f64();
        let test = encode_all(&splits.test, &outcome.best.vocab, &outcome.best.limits)?;
        let report = evaluate(&outcome.best.model, &test)?;
        let timing_cases = &test[..test.len().min(50)];
        let row = HopRow {
            hops: t,
            parameters: outcome.best.model.parameter_count(),
            micro_f1: report.judgment.micro_f1,
            macro_f1: report.judgment.macro_f1,
            fact_micro_f1: report.facts.as_ref().map(|f| f.micro_f1),
            best_epoch: outcome.best_epoch,
            train_seconds,
            inference_ms_per_case: time_inference(&outcome.best.model, timing_cases, 5)?,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Human-readable table with one row per hop count.
pub fn format_hop_table(rows: &[HopRow]) -> String {
    let mut out = String::from("hops | params | micro F1 | macro F1 | fact micro F1 | train s | infer ms/case\n");
    out.push_str("-----|--------|----------|----------|---------------|---------|--------------\n");
    for r in rows {
        let fact = r.fact_micro_f1.map_or("-".to_string(), |f| format!("{:.4}", f));
        out.push_str(&format!(
            "{:>4} | {:>6} | {:>8.4} | {:>8.4} | {:>13} | {:>7.1} | {:>12.3}\n",
            r.hops, r.parameters, r.micro_f1, r.macro_f1, fact, r.train_seconds, r.inference_ms_per_case
        ));
    }
    out
}

/// Human-readable ablation table.
pub fn format_ablation_table(table: &AblationTable) -> String {
    let mut out = String::from("variant              | micro F1 | macro F1 | RIE micro | RIE macro\n");
    out.push_str("---------------------|----------|----------|-----------|----------\n");
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    for r in &table.rows {
        out.push_str(&format!(
            "{:<20} | {:>8.4} | {:>8.4} | {:>9} | {:>9}\n",
            r.variant,
            r.median_micro_f1,
            r.median_macro_f1,
            fmt(r.rie_micro),
            fmt(r.rie_macro)
        ));
    }
    out.push_str(&table.rie_definition);
    out.push('\n');
    out
}

/// Predicted label for every claim of every case, in order.
pub fn predict_all(model: &Model, cases: &[EncodedCase]) -> Result<Vec<Vec<Judgment>>, TensorError> {
    cases
        .iter()
        .map(|c| Ok(model.infer(c, &FactOverrides::none())?.predictions()))
        .collect()
}
