//! Training configuration, readable from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Limits, SynthProfile};
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Dimensions, hop count, dropout and ablation flags. `vocab_size` is
    /// replaced by the size of the vocabulary built from the training split.
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping; `0` disables.
    pub patience: usize,
    /// Stop as soon as validation micro F1 reaches this value.
    pub target_micro_f1: Option<f64>,
    pub clip_norm: f64,
    pub seed: u64,
    pub min_count: usize,
    pub limits: Limits,
    /// Train / validation / test fractions for a single corpus file.
    pub split: [f64; 3],
    pub corpus: Option<PathBuf>,
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub synth: SynthProfile,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 50,
            patience: 10,
            target_micro_f1: None,
            clip_norm: 5.0,
            seed: 13,
            min_count: 1,
            limits: Limits::default(),
            split: [0.8, 0.1, 0.1],
            corpus: None,
            train_path: None,
            valid_path: None,
            test_path: None,
            synth: SynthProfile::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.batch_size >= 1, "batch size must be at least 1");
        anyhow::ensure!(self.learning_rate >= 0.0, "learning rate must be non-negative");
        anyhow::ensure!(self.clip_norm > 0.0, "clip norm must be positive");
        anyhow::ensure!(
            self.split.iter().all(|&f| f >= 0.0) && (self.split.iter().sum::<f64>() - 1.0).abs() < 1e-9,
            "split fractions must be non-negative and sum to 1"
        );
        let l = &self.limits;
        anyhow::ensure!(
            l.max_utterances >= 1 && l.max_utterance_len >= 1 && l.max_claims >= 1 && l.max_claim_len >= 1,
            "limits must be positive"
        );
        Ok(())
    }
}
