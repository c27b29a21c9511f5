//! Run configuration: every tunable in one TOML file.

use std::path::{Path, PathBuf};

use kws_core::dataio::AugmentSpec;
use kws_core::evaluation::{SmoothingConfig, TriggerConfig};
use kws_core::features::FeatureConfig;
use kws_core::labeling::{LabelingConfig, VadConfig};
use kws_core::network::Architecture;
use kws_core::training::TrainConfig;
use kws_core::{KwsError, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Operating point for the reported FRR.
    pub target_fah: f64,
    pub det_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            target_fah: 0.5,
            det_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub features: FeatureConfig,
    pub labeling: LabelingConfig,
    pub vad: VadConfig,
    pub network: Architecture,
    pub training: TrainConfig,
    pub smoothing: SmoothingConfig,
    pub trigger: TriggerConfig,
    pub augment: AugmentSpec,
    pub evaluation: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            features: FeatureConfig::default(),
            labeling: LabelingConfig::default(),
            vad: VadConfig::default(),
            network: Architecture::default(),
            training: TrainConfig::default(),
            smoothing: SmoothingConfig::default(),
            trigger: TriggerConfig::default(),
            augment: AugmentSpec::default(),
            evaluation: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| KwsError::Config(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(KwsError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    /// Reads a config file; relative noise paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KwsError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            KwsError::Config(m) => KwsError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.augment.noise_source_paths = config
            .augment
            .noise_source_paths
            .iter()
            .map(|p| if p.is_relative() { base.join(p) } else { p.clone() })
            .collect();
        Ok(config)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate(kws_core::features::SAMPLE_RATE)?;
        self.network.validate()?;
        self.training.validate()?;
        if self.network.input_dim != self.features.num_mels {
            return Err(KwsError::Config(format!(
                "network.input_dim {} differs from features.num_mels {}",
                self.network.input_dim, self.features.num_mels
            )));
        }
        if self.smoothing.w_smooth == 0 {
            return Err(KwsError::Config("smoothing.w_smooth must be >= 1".into()));
        }
        if !(self.evaluation.target_fah > 0.0) {
            return Err(KwsError::Config("evaluation.target_fah must be > 0".into()));
        }
        Ok(())
    }

    /// Writes the resolved configuration as `config.toml` in `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        let text = toml::to_string_pretty(self).map_err(|e| KwsError::Config(e.to_string()))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
