//! Run configuration: defaults, then a TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use migan_core::data::{AugmentSpec, DatasetKind, SyntheticParams};
use migan_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DatasetKind,
    /// Apply `augmentation` to the training part of the split.
    pub augment: bool,
    pub augmentation: AugmentSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { kind: DatasetKind::Drive, augment: false, augmentation: AugmentSpec::default() }
    }
}

/// Assets for the style objective.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleConfig {
    /// VGG-19 weights container; required when `train.extractor = "vgg19"`.
    pub vgg_weights: Option<PathBuf>,
    /// Dataset root whose `images/` supply style targets.
    pub images: Option<PathBuf>,
    /// Segmentation checkpoint adding its loss on generated images.
    pub guide: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub style: StyleConfig,
    pub synthetic: SyntheticParams,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigFile { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml(&text, path)?;
        // Relative asset paths are relative to the file that names them.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.style.vgg_weights, &mut cfg.style.images, &mut cfg.style.guide].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// The file if given, else defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        for &a in &self.data.augmentation.rotations {
            if !a.is_finite() {
                return Err(migan_core::Error::Config(format!("rotation angle {a} is not finite")).into());
            }
        }
        Ok(())
    }
}
