use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabn::NormalizerConfig;
use crate::model::DEFAULT_LAMBDA;
use crate::stream::{ScenarioConfig, DEFAULT_BASE_NOISE};

/// How the model is built by `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub seed: u64,
    pub classes: usize,
    pub template_seed: u64,
    pub base_noise: f64,
    pub lambda: f64,
    pub train_samples: usize,
    pub train_batch_size: usize,
    pub train_seed: u64,
    pub clean_eval_seed: u64,
    pub clean_eval_batches: usize,
    pub clean_eval_batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seed: 7,
            classes: 10,
            template_seed: 1,
            base_noise: DEFAULT_BASE_NOISE,
            lambda: DEFAULT_LAMBDA,
            train_samples: 4096,
            train_batch_size: 256,
            train_seed: 2,
            clean_eval_seed: 3,
            clean_eval_batches: 20,
            clean_eval_batch_size: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("model.classes", "need at least two classes"));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::config("model.lambda", "must be finite and > 0"));
        }
        if !(self.base_noise >= 0.0) || !self.base_noise.is_finite() {
            return Err(Error::config("model.base_noise", "must be finite and >= 0"));
        }
        if self.train_samples < self.classes {
            return Err(Error::config("model.train_samples", "fewer samples than classes"));
        }
        if self.train_batch_size == 0 {
            return Err(Error::config("model.train_batch_size", "must be at least 1"));
        }
        if self.clean_eval_batches == 0 || self.clean_eval_batch_size == 0 {
            return Err(Error::config("model.clean_eval_batches", "clean evaluation stream is empty"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub normalizer: NormalizerConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Scenario seeds, one run each. Empty means the scenario's own seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.normalizer.validate()?;
        self.model.validate()?;
        self.scenario.resolve()?;
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.scenario.seed]
        } else {
            self.seeds.clone()
        }
    }
}
