//! Case life-cycle records: claims, the role-tagged court debate, recognized
//! facts and per-claim judgments, plus their JSON-lines file format.

mod batch;
mod synth;
mod vocab;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{encode_batch, encode_case, Batch, EncodedCase, Limits};
pub use synth::{calibrated_marginals, oracle_judgment, synth_generate, SynthProfile};
pub use vocab::{build_vocab, tokenize, Vocabulary, PAD_ID, UNK_ID};

/// Number of fact labels.
pub const FACT_COUNT: usize = 10;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("case `{case_id}`: {msg}")]
    Invalid { case_id: String, msg: String },
    #[error("unknown {kind} `{value}`")]
    UnknownLabel { kind: &'static str, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

macro_rules! string_enum {
    ($name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }
        }

        impl FromStr for $name {
            type Err = CorpusError;
            fn from_str(s: &str) -> Result<Self, CorpusError> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(CorpusError::UnknownLabel { kind: $kind, value: s.to_string() }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_enum!(Role, "role", {
    Judge => "judge",
    Plaintiff => "plaintiff",
    Defendant => "defendant",
    Witness => "witness",
});

string_enum!(Judgment, "judgment label", {
    Reject => "reject",
    PartiallySupport => "partially_support",
    Support => "support",
});

string_enum!(FactLabel, "fact label", {
    AgreedLoanPeriod => "Agreed Loan Period",
    CoupleDebt => "Couple Debt",
    LimitationOfAction => "Limitation of Action",
    LiquidatedDamages => "Liquidated Damages",
    RepaymentBehavior => "Repayment Behavior",
    TermOfGuarantee => "Term of Guarantee",
    GuaranteeLiability => "Guarantee Liability",
    TermOfRepayment => "Term of Repayment",
    InterestDispute => "Interest Dispute",
    LoanEstablished => "Loan Established",
});

string_enum!(ClaimKind, "claim kind", {
    Principal => "principal",
    Interest => "interest",
    LiquidatedDamages => "liquidated_damages",
    GuarantorLiability => "guarantor_liability",
    SpouseJointDebt => "spouse_joint_debt",
});

pub const JUDGMENT_COUNT: usize = 3;

/// Recognized facts, one flag per [`FactLabel`] in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Facts(pub [bool; FACT_COUNT]);

impl Facts {
    pub fn from_bits(bits: u16) -> Self {
        let mut f = [false; FACT_COUNT];
        for (i, v) in f.iter_mut().enumerate() {
            *v = bits >> i & 1 == 1;
        }
        Facts(f)
    }

    pub fn get(&self, label: FactLabel) -> bool {
        self.0[label.index()]
    }

    pub fn set(&mut self, label: FactLabel, value: bool) {
        self.0[label.index()] = value;
    }
}

impl Serialize for Facts {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let bits: Vec<u8> = self.0.iter().map(|&b| b as u8).collect();
        bits.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Facts {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let bits = Vec::<u8>::deserialize(d)?;
        if bits.len() != FACT_COUNT {
            return Err(serde::de::Error::custom(format!(
                "expected {FACT_COUNT} fact flags, got {}",
                bits.len()
            )));
        }
        let mut f = [false; FACT_COUNT];
        for (slot, b) in f.iter_mut().zip(bits) {
            *slot = match b {
                0 => false,
                1 => true,
                other => {
                    return Err(serde::de::Error::custom(format!(
                        "fact flag must be 0 or 1, got {other}"
                    )))
                }
            };
        }
        Ok(Facts(f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub text: String,
    /// Claim category; present on generated cases, needed by the rule oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ClaimKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub text: String,
}

/// One case: pre-trial claims, the court debate and (optionally) the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub claims: Vec<Claim>,
    pub utterances: Vec<Utterance>,
    pub facts: Facts,
    pub judgments: Vec<Judgment>,
}

impl Case {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |msg: String| CorpusError::Invalid {
            case_id: self.case_id.clone(),
            msg,
        };
        if self.claims.is_empty() {
            return Err(invalid("case has no claims".into()));
        }
        if self.utterances.is_empty() {
            return Err(invalid("case has no utterances".into()));
        }
        if self.judgments.len() != self.claims.len() {
            return Err(invalid(format!(
                "{} claims but {} judgments",
                self.claims.len(),
                self.judgments.len()
            )));
        }
        if let Some(i) = self.claims.iter().position(|c| tokenize(&c.text).is_empty()) {
            return Err(invalid(format!("claim {i} is empty")));
        }
        if let Some(i) = self.utterances.iter().position(|u| tokenize(&u.text).is_empty()) {
            return Err(invalid(format!("utterance {i} is empty")));
        }
        Ok(())
    }
}

/// Reads one JSON case per line; blank lines are skipped.
pub fn load_cases(path: impl AsRef<Path>) -> Result<Vec<Case>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut cases = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let case = parse_case_line(&line).map_err(|e| match e {
            CorpusError::Invalid { case_id, msg } => CorpusError::Parse {
                line: i + 1,
                msg: format!("case `{case_id}`: {msg}"),
            },
            CorpusError::Parse { msg, .. } => CorpusError::Parse { line: i + 1, msg },
            other => other,
        })?;
        cases.push(case);
    }
    Ok(cases)
}

fn parse_case_line(line: &str) -> Result<Case, CorpusError> {
    let case: Case = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    case.validate()?;
    Ok(case)
}

pub fn save_cases(path: impl AsRef<Path>, cases: &[Case]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for case in cases {
        serde_json::to_writer(&mut w, case).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
