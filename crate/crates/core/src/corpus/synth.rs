//! Synthetic private-lending cases with a deterministic fact → judgment rule.
//!
//! Each case is produced by a small generative program:
//!
//! 1. fact flags are drawn with calibrated marginals (balanced across the
//!    corpus, see [`synth_generate`]);
//! 2. one to three distinct claim kinds are drawn;
//! 3. every claim is labelled by [`oracle_judgment`];
//! 4. the debate is written: a judge opening, one exchange per active fact
//!    (topic word + affirming word), a denial exchange for some inactive
//!    facts (topic word + denying word), optional judge questions and
//!    role-flavoured filler.
//!
//! The rule table (also in `docs/rule_table.md`):
//!
//! | claim kind            | reject when            | partially support when        | otherwise |
//! |-----------------------|------------------------|-------------------------------|-----------|
//! | `principal`           | Loan Established = 0   | Repayment Behavior = 1        | support   |
//! | `interest`            | Loan Established = 0   | Interest Dispute = 1          | support   |
//! | `liquidated_damages`  | Loan Established = 0   | Liquidated Damages = 1        | support   |
//! | `guarantor_liability` | Loan Established = 0   | Term of Guarantee = 1         | support   |
//! | `spouse_joint_debt`   | Loan Established = 0   | Couple Debt = 0               | support   |

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Case, Claim, ClaimKind, FactLabel, Facts, Judgment, Role, Utterance, FACT_COUNT};

impl ClaimKind {
    /// The fact that decides between partial and full support, and the flag
    /// value that yields partial support.
    pub fn decisive_fact(self) -> (FactLabel, bool) {
        match self {
            ClaimKind::Principal => (FactLabel::RepaymentBehavior, true),
            ClaimKind::Interest => (FactLabel::InterestDispute, true),
            ClaimKind::LiquidatedDamages => (FactLabel::LiquidatedDamages, true),
            ClaimKind::GuarantorLiability => (FactLabel::TermOfGuarantee, true),
            ClaimKind::SpouseJointDebt => (FactLabel::CoupleDebt, false),
        }
    }

    fn phrase(self) -> &'static [&'static str] {
        match self {
            ClaimKind::Principal => &["repay", "principal"],
            ClaimKind::Interest => &["pay", "interest"],
            ClaimKind::LiquidatedDamages => &["pay", "penalty"],
            ClaimKind::GuarantorLiability => &["guarantor", "joint", "liability"],
            ClaimKind::SpouseJointDebt => &["spouse", "joint", "repayment"],
        }
    }
}

/// The judge's rule: total over every fact vector and claim kind.
pub fn oracle_judgment(facts: &Facts, kind: ClaimKind) -> Judgment {
    if !facts.get(FactLabel::LoanEstablished) {
        return Judgment::Reject;
    }
    let (fact, partial_when) = kind.decisive_fact();
    if facts.get(fact) == partial_when {
        Judgment::PartiallySupport
    } else {
        Judgment::Support
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    /// Target reject : partially_support : support ratio.
    pub label_ratio: [f64; 3],
    /// Relative weights for cases with 1, 2 and 3 claims.
    pub claims_per_case: [f64; 3],
    /// Marginal of facts that no rule reads.
    pub neutral_fact_rate: f64,
    /// Chance that an inactive fact is explicitly denied in the debate.
    pub denial_rate: f64,
    /// Chance that the judge asks about a topic before the answer.
    pub question_rate: f64,
    /// Inclusive range of filler utterances per case.
    pub filler_utterances: [usize; 2],
    pub max_utterance_len: usize,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            label_ratio: [1.0, 2.6, 10.9],
            claims_per_case: [1.0, 2.0, 1.0],
            neutral_fact_rate: 0.5,
            denial_rate: 0.5,
            question_rate: 0.4,
            filler_utterances: [0, 2],
            max_utterance_len: 16,
        }
    }
}

/// Per-fact activation rates that make the rule oracle reproduce the
/// profile's label ratio in expectation for every claim kind.
pub fn calibrated_marginals(profile: &SynthProfile) -> [f64; FACT_COUNT] {
    let total: f64 = profile.label_ratio.iter().sum();
    let reject = profile.label_ratio[0] / total;
    let partial = profile.label_ratio[1] / total;
    let established = 1.0 - reject;
    let partial_given_established = partial / established;
    let mut rates = [profile.neutral_fact_rate; FACT_COUNT];
    rates[FactLabel::LoanEstablished.index()] = established;
    for &kind in ClaimKind::ALL {
        let (fact, partial_when) = kind.decisive_fact();
        rates[fact.index()] = if partial_when {
            partial_given_established
        } else {
            1.0 - partial_given_established
        };
    }
    rates
}

fn topic_words(fact: FactLabel) -> [&'static str; 2] {
    match fact {
        FactLabel::AgreedLoanPeriod => ["loan_period", "borrowing_term"],
        FactLabel::CoupleDebt => ["marriage", "couple"],
        FactLabel::LimitationOfAction => ["limitation", "prescription"],
        FactLabel::LiquidatedDamages => ["damages", "breach_fee"],
        FactLabel::RepaymentBehavior => ["repaid", "installment"],
        FactLabel::TermOfGuarantee => ["guarantee_period", "surety_term"],
        FactLabel::GuaranteeLiability => ["surety", "guarantee_contract"],
        FactLabel::TermOfRepayment => ["due_date", "deadline"],
        FactLabel::InterestDispute => ["rate", "usury"],
        FactLabel::LoanEstablished => ["loan", "transfer"],
    }
}

const AFFIRM: &[&str] = &["yes", "confirmed", "agreed", "true", "admitted"];
const DENY: &[&str] = &["no", "denied", "never", "false", "disputed"];
const AMOUNTS: &[&str] = &["small_sum", "medium_sum", "large_sum", "unspecified_sum"];

fn filler(role: Role) -> &'static [&'static str] {
    match role {
        Role::Judge => &["court", "session", "record", "noted", "proceed", "next", "clarify"],
        Role::Plaintiff => &["plaintiff", "we", "submit", "evidence", "our", "request", "state"],
        Role::Defendant => &["defendant", "i", "my", "respond", "explain", "client", "reply"],
        Role::Witness => &["witness", "saw", "heard", "present", "remember", "recall", "there"],
    }
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().expect("non-empty word list")
}

fn filler_words<R: Rng>(rng: &mut R, role: Role, max: usize, out: &mut Vec<&'static str>) {
    let n = rng.gen_range(0..=max);
    for _ in 0..n {
        out.push(pick(rng, filler(role)));
    }
}

fn exchange<R: Rng>(rng: &mut R, profile: &SynthProfile, fact: FactLabel, active: bool) -> Vec<Utterance> {
    let mut out = Vec::new();
    let topic = pick(rng, &topic_words(fact));
    if rng.gen_bool(profile.question_rate) {
        let mut words = vec!["court", "asks", "about"];
        words.push(topic);
        filler_words(rng, Role::Judge, 2, &mut words);
        out.push(Utterance {
            role: Role::Judge,
            text: words.join(" "),
        });
    }
    let role = *[
        Role::Plaintiff,
        Role::Plaintiff,
        Role::Defendant,
        Role::Defendant,
        Role::Witness,
    ]
    .choose(rng)
    .expect("roles");
    let budget = profile.max_utterance_len.saturating_sub(2) / 2;
    let mut words = Vec::new();
    filler_words(rng, role, budget.min(3), &mut words);
    words.push(topic);
    words.push(pick(rng, if active { AFFIRM } else { DENY }));
    filler_words(rng, role, budget.min(3), &mut words);
    out.push(Utterance {
        role,
        text: words.join(" "),
    });
    out
}

fn filler_utterance<R: Rng>(rng: &mut R, profile: &SynthProfile) -> Utterance {
    let role = *Role::ALL.choose(rng).expect("roles");
    let mut words = vec![pick(rng, filler(role))];
    let extra = rng.gen_range(1..=profile.max_utterance_len.clamp(2, 6) - 1);
    for _ in 0..extra {
        words.push(pick(rng, filler(role)));
    }
    Utterance {
        role,
        text: words.join(" "),
    }
}

fn sample_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Generates `n_cases` labelled cases from `seed`.
///
/// Each fact is active in exactly `round(n_cases · rate)` cases, chosen by an
/// independent shuffle per fact. This keeps the corpus-level label ratio
/// close to the profile even for small corpora.
pub fn synth_generate(seed: u64, n_cases: usize, profile: &SynthProfile) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rates = calibrated_marginals(profile);
    let mut facts = vec![Facts::default(); n_cases];
    let mut order: Vec<usize> = (0..n_cases).collect();
    for (p, &rate) in rates.iter().enumerate() {
        order.shuffle(&mut rng);
        let active = (n_cases as f64 * rate).round() as usize;
        for &i in &order[..active.min(n_cases)] {
            facts[i].0[p] = true;
        }
    }
    facts
        .into_iter()
        .enumerate()
        .map(|(i, f)| generate_case(&mut rng, profile, format!("synth-{seed}-{i:05}"), f))
        .collect()
}

fn generate_case<R: Rng>(rng: &mut R, profile: &SynthProfile, case_id: String, facts: Facts) -> Case {
    let k = sample_weighted(rng, &profile.claims_per_case) + 1;
    let mut kinds = ClaimKind::ALL.to_vec();
    kinds.shuffle(rng);
    kinds.truncate(k.min(kinds.len()));

    let claims: Vec<Claim> = kinds
        .iter()
        .map(|&kind| {
            let mut words = vec!["request", "defendant"];
            words.extend_from_slice(kind.phrase());
            words.push(pick(rng, AMOUNTS));
            Claim {
                text: words.join(" "),
                kind: Some(kind),
            }
        })
        .collect();
    let judgments = kinds.iter().map(|&kind| oracle_judgment(&facts, kind)).collect();

    let mut utterances = vec![Utterance {
        role: Role::Judge,
        text: "court session opens record".to_string(),
    }];
    let mut fact_order: Vec<FactLabel> = FactLabel::ALL.to_vec();
    fact_order.shuffle(rng);
    let mut body = Vec::new();
    for fact in fact_order {
        let active = facts.get(fact);
        if active || rng.gen_bool(profile.denial_rate) {
            body.push(exchange(rng, profile, fact, active));
        }
    }
    let [lo, hi] = profile.filler_utterances;
    for _ in 0..rng.gen_range(lo..=hi.max(lo)) {
        let at = rng.gen_range(0..=body.len());
        body.insert(at, vec![filler_utterance(rng, profile)]);
    }
    utterances.extend(body.into_iter().flatten());

    Case {
        case_id,
        claims,
        utterances,
        facts,
        judgments,
    }
}
