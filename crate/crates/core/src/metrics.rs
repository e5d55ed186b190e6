//! Classification metrics for judgments and fact labels.

use serde::{Deserialize, Serialize};

use crate::corpus::{FactLabel, Judgment, FACT_COUNT, JUDGMENT_COUNT};

/// Counts indexed `[gold][predicted]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; JUDGMENT_COUNT]; JUDGMENT_COUNT]);

impl ConfusionMatrix {
    pub fn from_pairs(gold: &[Judgment], predicted: &[Judgment]) -> Self {
        assert_eq!(gold.len(), predicted.len(), "gold and predicted lengths differ");
        let mut m = Self::default();
        for (g, p) in gold.iter().zip(predicted) {
            m.add(*g, *p);
        }
        m
    }

    pub fn add(&mut self, gold: Judgment, predicted: Judgment) {
        self.0[gold.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..JUDGMENT_COUNT).map(|i| self.0[i][i]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 from raw counts; zero denominators give 0.
pub fn prf(tp: u64, fp: u64, fn_: u64) -> ClassScores {
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores { precision, recall, f1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentMetrics {
    pub claims: u64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Pooled over all claims; equals accuracy.
    pub micro_f1: f64,
    /// In [`Judgment`] order.
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
}

impl JudgmentMetrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let m = &confusion.0;
        let per_class: Vec<ClassScores> = (0..JUDGMENT_COUNT)
            .map(|c| {
                let tp = m[c][c];
                let fp = (0..JUDGMENT_COUNT).map(|g| m[g][c]).sum::<u64>() - tp;
                let fn_ = m[c].iter().sum::<u64>() - tp;
                prf(tp, fp, fn_)
            })
            .collect();
        let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / JUDGMENT_COUNT as f64;
        let total = confusion.total();
        Self {
            claims: total,
            macro_precision: mean(|s| s.precision),
            macro_recall: mean(|s| s.recall),
            macro_f1: mean(|s| s.f1),
            micro_f1: if total == 0 {
                0.0
            } else {
                confusion.correct() as f64 / total as f64
            },
            per_class,
            confusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactLabelScores {
    pub label: FactLabel,
    /// Accuracy of the binary decision over cases.
    pub micro_f1: f64,
    /// Mean of the positive-class and negative-class F1.
    pub macro_f1: f64,
    pub positive: ClassScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactMetrics {
    pub cases: u64,
    pub per_label: Vec<FactLabelScores>,
    /// Pooled over every (case, label) decision; equals their accuracy.
    pub micro_f1: f64,
    /// Mean of the per-label macro F1.
    pub macro_f1: f64,
    /// Positive-class F1 pooled over every (case, label) decision.
    pub positive_micro_f1: f64,
}

/// Accumulates binary fact decisions per label.
#[derive(Debug, Clone, Default)]
pub struct FactTally {
    /// Per label `[tp, fp, fn, tn]`.
    counts: [[u64; 4]; FACT_COUNT],
    cases: u64,
}

impl FactTally {
    pub fn add(&mut self, gold: &[bool; FACT_COUNT], predicted: &[bool; FACT_COUNT]) {
        self.cases += 1;
        for (c, (&g, &p)) in self.counts.iter_mut().zip(gold.iter().zip(predicted)) {
            let slot = match (g, p) {
                (true, true) => 0,
                (false, true) => 1,
                (true, false) => 2,
                (false, false) => 3,
            };
            c[slot] += 1;
        }
    }

    pub fn finish(&self) -> FactMetrics {
        let per_label: Vec<FactLabelScores> = FactLabel::ALL
            .iter()
            .zip(&self.counts)
            .map(|(&label, &[tp, fp, fn_, tn])| {
                let positive = prf(tp, fp, fn_);
                let negative = prf(tn, fn_, fp);
                let n = tp + fp + fn_ + tn;
                FactLabelScores {
                    label,
                    micro_f1: if n == 0 { 0.0 } else { (tp + tn) as f64 / n as f64 },
                    macro_f1: (positive.f1 + negative.f1) / 2.0,
                    positive,
                }
            })
            .collect();
        let sum = |i: usize| self.counts.iter().map(|c| c[i]).sum::<u64>();
        let (tp, fp, fn_, tn) = (sum(0), sum(1), sum(2), sum(3));
        let n = tp + fp + fn_ + tn;
        FactMetrics {
            cases: self.cases,
            micro_f1: if n == 0 { 0.0 } else { (tp + tn) as f64 / n as f64 },
            macro_f1: per_label.iter().map(|s| s.macro_f1).sum::<f64>() / FACT_COUNT as f64,
            positive_micro_f1: prf(tp, fp, fn_).f1,
            per_label,
        }
    }
}

/// Micro and macro F1 of a constant predictor that always outputs the
/// most frequent class, for class counts `counts`.
pub fn majority_baseline(counts: &[f64; JUDGMENT_COUNT]) -> (f64, f64) {
    let total: f64 = counts.iter().sum();
    let majority = (0..JUDGMENT_COUNT).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    let micro = counts[majority] / total;
    let majority_f1 = 2.0 * micro / (1.0 + micro);
    (micro, majority_f1 / JUDGMENT_COUNT as f64)
}
