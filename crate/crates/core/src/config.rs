//! Run configuration: one TOML file with a section per stage.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::detector::{DetectorConfig, TrainingConfig};
use crate::error::{Error, Result};
use crate::recognizer::{PretrainConfig, RecognizerConfig};

/// File name of the effective configuration written next to every output.
pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub recognizer: RecognizerConfig,
    pub pretrain: PretrainConfig,
    pub training: TrainingConfig,
    pub detector: DetectorConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the effective configuration as `config.toml` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_ECHO);
        fs::write(&path, self.render()?).map_err(|e| Error::io(path, e))
    }

    /// Uses `seed` for every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.pretrain.seed = seed;
        self.training.seed = seed;
        self.detector.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.recognizer.validate()?;
        self.training.validate()?;
        self.detector.validate()?;
        if self.recognizer.input_channels != self.synth.channels {
            return Err(Error::Config(format!(
                "recognizer.input_channels {} differs from synth.channels {}",
                self.recognizer.input_channels, self.synth.channels
            )));
        }
        if self.recognizer.phonemes != self.synth.phonemes {
            return Err(Error::Config(format!(
                "recognizer.phonemes {} differs from synth.phonemes {}",
                self.recognizer.phonemes, self.synth.phonemes
            )));
        }
        if self.training.clip_frames < self.recognizer.min_input_len() {
            return Err(Error::Config(format!(
                "training.clip_frames {} is below the recognizer minimum of {}",
                self.training.clip_frames,
                self.recognizer.min_input_len()
            )));
        }
        Ok(())
    }
}
