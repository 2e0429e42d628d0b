//! TOML run configuration. Every hyperparameter must be spelled out — there
//! are no defaults and unknown keys are rejected, so a typo like
//! `lambda_expolre` fails loudly instead of silently training with the
//! built-in value.

use crate::{CliError, Result};
use maps_core::policy::TotalLossWeights;
use maps_core::selector::SelectorLossWeights;
use maps_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub num_modules: usize,
    pub feature_dim: usize,
    pub module_hidden: Vec<usize>,
    pub selector_hidden: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub train_fraction: f64,
    pub seed: u64,
    pub loss_weights: LossWeightsFile,
    pub selector_weights: SelectorWeightsFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeightsFile {
    pub imitate: f64,
    pub selector: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectorWeightsFile {
    pub share: f64,
    pub explore: f64,
    pub sparse: f64,
    pub smooth: f64,
}

impl ConfigFile {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            num_modules: self.num_modules,
            feature_dim: self.feature_dim,
            module_hidden: self.module_hidden.clone(),
            selector_hidden: self.selector_hidden.clone(),
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            loss_weights: TotalLossWeights {
                imitate: self.loss_weights.imitate,
                selector: self.loss_weights.selector,
            },
            selector_weights: SelectorLossWeights {
                share: self.selector_weights.share,
                explore: self.selector_weights.explore,
                sparse: self.selector_weights.sparse,
                smooth: self.selector_weights.smooth,
            },
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }

    pub fn from_train_config(cfg: &TrainConfig) -> Self {
        Self {
            num_modules: cfg.num_modules,
            feature_dim: cfg.feature_dim,
            module_hidden: cfg.module_hidden.clone(),
            selector_hidden: cfg.selector_hidden.clone(),
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            adam_beta1: cfg.adam_beta1,
            adam_beta2: cfg.adam_beta2,
            adam_epsilon: cfg.adam_epsilon,
            train_fraction: cfg.train_fraction,
            seed: cfg.seed,
            loss_weights: LossWeightsFile {
                imitate: cfg.loss_weights.imitate,
                selector: cfg.loss_weights.selector,
            },
            selector_weights: SelectorWeightsFile {
                share: cfg.selector_weights.share,
                explore: cfg.selector_weights.explore,
                sparse: cfg.selector_weights.sparse,
                smooth: cfg.selector_weights.smooth,
            },
        }
    }

    /// Canonical TOML rendering — the form hashed for provenance and echoed
    /// into checkpoints. Serialization order is the struct field order, so
    /// two equal configs always render identically.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    /// SHA-256 of the canonical rendering, hex-encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| CliError::Config(flatten_toml_error(&e)))?;
    let cfg = file.to_train_config();
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(file)
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::io_err(path, e))?;
    parse_config(&text)
}

/// toml's errors are multi-line (they underline the offending span); collapse
/// to one line so the `error[config]: ...` contract holds.
fn flatten_toml_error(e: &toml::de::Error) -> String {
    let mut msg = e.message().to_string();
    if let Some(span) = e.span() {
        msg.push_str(&format!(" (at byte {})", span.start));
    }
    msg
}
