//! The toolkit configuration file: one TOML document aggregating every
//! stage's parameters. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{AugmentConfig, StftConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::grid_codec::GridConfig;
use crate::model::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    /// Working sampling rate; records are resampled to this before
    /// feature extraction.
    pub sample_rate_hz: u32,
    /// Pseudolabel selection percentage per wave class.
    pub top_percent: f64,
    pub seed: u64,
    pub grid: GridConfig,
    pub stft: StftConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        ToolkitConfig {
            sample_rate_hz: 1000,
            top_percent: 50.0,
            seed: 0,
            grid: GridConfig::default(),
            stft: StftConfig::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ToolkitConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<ToolkitConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ToolkitConfig =
            toml::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::config("sample_rate_hz must be positive"));
        }
        if !(self.top_percent > 0.0 && self.top_percent <= 100.0) {
            return Err(Error::config("top_percent must lie in (0, 100]"));
        }
        self.grid.validate()?;
        let fs = self.sample_rate_hz as f64;
        self.stft.validate(fs)?;
        self.augment.validate(fs)?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        // The model must line up with the grid and the feature frontend.
        let frames = self.grid.record_len.div_ceil(self.stft.hop);
        if self.model.n_frames != frames
            || self.model.n_mel != self.stft.n_mel
            || self.model.n_intervals != self.grid.n_intervals
        {
            return Err(Error::config(format!(
                "model geometry ({} mel x {} frames -> {} intervals) does not match \
                 the pipeline ({} mel x {} frames -> {} intervals)",
                self.model.n_mel,
                self.model.n_frames,
                self.model.n_intervals,
                self.stft.n_mel,
                frames,
                self.grid.n_intervals
            )));
        }
        Ok(())
    }
}
