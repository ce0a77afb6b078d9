//! The run configuration shared by every CLI subcommand.

use crate::arch::ModelConfig;
use crate::augment::{AugmentConfig, DilationConfig};
use crate::contrastive::LossConfig;
use crate::energy::TechConstants;
use crate::error::{Error, Result};
use crate::retrieval::EvalConfig;
use crate::synth::RouteConfig;
use crate::train::{OptimSettings, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SNAPSHOT_FILE: &str = "resolved_config.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Directory holding a dataset manifest. When absent the dataset is
    /// generated in memory from `synth`.
    pub path: Option<PathBuf>,
    pub synth: RouteConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    /// Places drawn from the dataset for spike monitoring.
    pub samples: usize,
    pub tech: TechConstants,
}

impl Default for EnergySection {
    fn default() -> Self {
        Self {
            samples: 16,
            tech: TechConstants::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub optim: OptimSettings,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
    pub energy: EnergySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            dataset: DatasetSection::default(),
            model: ModelConfig::shallow(32, 32),
            augment: AugmentConfig {
                dilation: true,
                flip: true,
                dilation_window: Some(DilationConfig::new(600_000, 3_600_000).expect("static window")),
                ..AugmentConfig::default()
            },
            optim: OptimSettings {
                clip_norm: Some(1.0),
                ..OptimSettings::default()
            },
            train: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
            loss: LossConfig {
                batch_size: 16,
                ..LossConfig::default()
            },
            eval: EvalConfig::default(),
            energy: EnergySection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Checks every section; nothing runs on a config that fails here.
    pub fn validate(&self) -> Result<()> {
        self.dataset.synth.validate()?;
        self.model.validate()?;
        let synth = &self.dataset.synth;
        let sensor = (synth.height as usize, synth.width as usize);
        if self.dataset.path.is_none() && sensor != (self.model.input_height, self.model.input_width) {
            return Err(Error::InvalidConfig(format!(
                "model input {}×{} does not match the synthetic sensor {}×{}",
                self.model.input_width, self.model.input_height, synth.width, synth.height
            )));
        }
        self.augment.validate()?;
        self.optim.resolve(2, self.seed)?;
        self.train.validate()?;
        self.loss.validate()?;
        self.eval.validate()?;
        self.energy.tech.validate()?;
        if self.energy.samples == 0 {
            return Err(Error::InvalidConfig("energy.samples must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))
    }

    /// Writes the fully resolved config into `dir` and returns its path.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(SNAPSHOT_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
