//! Run configuration: a JSON file with `data`, `model`, `train` and
//! `serve` sections. Every section rejects unknown keys; command-line
//! flags are applied on top by the CLI.

use std::path::{Path, PathBuf};

use hermes_core::ehr::GeneratorConfig;
use hermes_core::model::ModelConfig;
use hermes_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub serve: ServeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Cohort file; a synthetic cohort is generated when absent.
    pub dataset: Option<PathBuf>,
    /// Interaction TSV; synthetic records are drawn when absent.
    pub ddi: Option<PathBuf>,
    /// Seeds cohort generation and the patient split.
    pub seed: u64,
    pub generator: GeneratorConfig,
    /// Interaction types kept, ranked by severity.
    pub ddi_top_k: usize,
    pub synthetic_ddi_records: usize,
    pub synthetic_ddi_types: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset: None,
            ddi: None,
            seed: 0,
            generator: GeneratorConfig::default(),
            ddi_top_k: 90,
            synthetic_ddi_records: 2000,
            synthetic_ddi_types: 120,
        }
    }
}

/// Urgent symptom tags that always route the user to a doctor.
pub const DEFAULT_RED_FLAGS: [&str; 6] = [
    "chest_pain",
    "severe_allergic_reaction",
    "breathing_difficulty",
    "high_fever",
    "stroke_symptoms",
    "severe_abdominal_pain",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub checkpoint: Option<PathBuf>,
    /// Interaction TSV overriding the checkpoint's graph for warnings.
    pub ddi: Option<PathBuf>,
    pub host: String,
    pub port: u16,
    pub top_k: usize,
    /// Drop recommendations that interact instead of only warning.
    pub filter_ddi: bool,
    pub red_flags: Vec<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            checkpoint: None,
            ddi: None,
            host: "127.0.0.1".into(),
            port: 8080,
            top_k: 10,
            filter_ddi: false,
            red_flags: DEFAULT_RED_FLAGS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl RunConfig {
    /// Reads a config file. A missing or invalid file is a usage error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        if self.data.dataset.is_none() {
            self.data.generator.validate().map_err(|e| e.to_string())?;
        }
        if self.data.ddi_top_k == 0 {
            return Err("data.ddi_top_k must be positive".into());
        }
        if self.serve.top_k == 0 {
            return Err("serve.top_k must be positive".into());
        }
        Ok(())
    }

    /// One seed for generation, splitting and training.
    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.train.seed = seed;
    }
}
