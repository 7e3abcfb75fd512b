//! Experiment configuration file (TOML). Every section is optional and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wsed_core::eval::MatchConfig;
use wsed_core::losses::{LossConfig, LossVariant};
use wsed_core::nn::{Activation, AdamConfig, EarlyStopping, ModelSpec};
use wsed_core::postprocess::PostprocessConfig;
use wsed_core::threshold_opt::SearchConfig;

use crate::error::{config_error, CliResult, Coded};

/// Version stamped into every file this tool writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default = "default_loss")]
    pub loss: LossConfig,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub postprocess: PostprocessConfig,
    #[serde(default)]
    pub matching: MatchConfig,
    #[serde(default)]
    pub search: SearchConfig,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_epochs() -> usize {
    10
}

fn default_loss() -> LossConfig {
    LossConfig::new(LossVariant::MilMaxCos).with_alpha(0.1)
}

/// Network shape; input and output widths come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub dense_widths: Vec<usize>,
    pub activation: Activation,
    pub recurrent_width: usize,
    pub bidirectional: bool,
    pub recurrent_dropout: f64,
    pub output_dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            dense_widths: vec![16],
            activation: Activation::Glu,
            recurrent_width: 16,
            bidirectional: true,
            recurrent_dropout: 0.0,
            output_dropout: 0.0,
        }
    }
}

impl ModelSection {
    pub fn spec(&self, input_dim: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            dense_widths: self.dense_widths.clone(),
            activation: self.activation,
            recurrent_width: self.recurrent_width,
            bidirectional: self.bidirectional,
            classes,
            recurrent_dropout: self.recurrent_dropout,
            output_dropout: self.output_dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Defaults to patience 15 / min delta 1e-4 for `fsl`, off otherwise.
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            batch_size: 8,
            adam: AdamConfig::default(),
            early_stopping: None,
        }
    }
}

/// Dataset paths, relative to the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).config(format!("reading config {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).config(format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.train, &mut cfg.data.validation]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_error(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.epochs == 0 {
            return Err(config_error("epochs must be >= 1"));
        }
        if self.training.batch_size == 0 {
            return Err(config_error("training.batch_size must be >= 1"));
        }
        self.loss.validate()?;
        self.postprocess.validate()?;
        self.matching.validate()?;
        self.search.validate()?;
        // shape checks need the real widths; any positive placeholder will do
        self.model.spec(1, 1).validate()?;
        Ok(())
    }

    pub fn early_stopping(&self) -> Option<EarlyStopping> {
        match (self.training.early_stopping, self.loss.variant) {
            (Some(es), _) => Some(es),
            (None, LossVariant::Fsl) => Some(EarlyStopping::fsl_default()),
            (None, _) => None,
        }
    }
}
