//! Experiment configuration files (TOML, unknown keys rejected).

use std::path::{Path, PathBuf};

use nsedit_harness::scene::SceneConfig;
use nsedit_harness::study::{StudyConfig, StudySettings};
use nsedit_harness::tracker::{ModelConfig, TrackerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::output::sha256_hex;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    /// Directory for reports; `--out` overrides it.
    pub dir: Option<PathBuf>,
    /// Also write per-frame stage timings (not deterministic).
    pub timings: bool,
}

/// One file describes a whole experiment. Every table is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub study: StudySettings,
    pub scene: SceneConfig,
    pub tracker: TrackerConfig,
    pub model: ModelConfig,
    pub output: OutputSettings,
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::ConfigSyntax {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn study(&self) -> StudyConfig {
        StudyConfig {
            study: self.study.clone(),
            scene: self.scene.clone(),
            tracker: self.tracker.clone(),
            model: self.model.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.study()
            .validate()
            .map_err(|e| CliError::ConfigInvalid(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering of the settings that shape
    /// results. The output table is left out so that the same experiment
    /// written to two directories carries the same hash.
    pub fn hash(&self) -> String {
        let text = toml::to_string(&self.study()).expect("config serializes");
        sha256_hex(text.as_bytes())
    }
}
