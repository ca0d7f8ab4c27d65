//! Versioned checkpoint files on top of the tensor archive.
//!
//! The network specs are stored as TOML text next to their SHA-256; loading
//! recomputes the hash and refuses a file whose spec text, tensors or
//! configuration disagree.

use std::path::Path;

use migan_core::losses::Mode;
use migan_core::networks::{NetworkSpec, NetworkState};
use migan_core::trainer::{Checkpoint, NetworkSnapshot, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::archive::{sha256_hex, Archive};
use crate::error::{Error, Result};

pub const KIND: &str = "migan-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

const GEN: &str = "generator/";
const DISC: &str = "discriminator/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSpec {
    pub mode: Mode,
    pub generator: NetworkSpec,
    pub discriminator: NetworkSpec,
}

impl CheckpointSpec {
    pub fn of(config: &TrainConfig) -> Self {
        CheckpointSpec {
            mode: config.mode,
            generator: config.generator_spec(),
            discriminator: config.discriminator_spec(),
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    spec: String,
    spec_sha256: String,
    step: u64,
    epoch: Option<usize>,
    val_loss: Option<f64>,
    generator_version: u64,
    discriminator_version: u64,
    config: TrainConfig,
}

pub fn to_archive(ckpt: &Checkpoint) -> Archive {
    let spec = CheckpointSpec {
        mode: ckpt.config.mode,
        generator: ckpt.generator.spec.clone(),
        discriminator: ckpt.discriminator.spec.clone(),
    };
    let meta = Meta {
        format_version: FORMAT_VERSION,
        spec: spec.to_text(),
        spec_sha256: spec.hash(),
        step: ckpt.step,
        epoch: ckpt.epoch,
        val_loss: ckpt.val_loss,
        generator_version: ckpt.generator.version,
        discriminator_version: ckpt.discriminator.version,
        config: ckpt.config.clone(),
    };
    let mut tensors = Vec::new();
    for (prefix, snap) in [(GEN, &ckpt.generator), (DISC, &ckpt.discriminator)] {
        tensors.extend(snap.tensors.iter().map(|(n, t)| (format!("{prefix}{n}"), t.clone())));
    }
    Archive::new(KIND, serde_json::to_value(meta).expect("meta serializes"), tensors)
}

pub fn from_archive(archive: Archive, path: &Path) -> Result<Checkpoint> {
    if archive.kind != KIND {
        return Err(Error::format(path, KIND, format!("archive holds {:?}", archive.kind)));
    }
    let meta: Meta = serde_json::from_value(archive.meta).map_err(|e| Error::format(path, KIND, e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::format(path, KIND, format!("unsupported format version {}", meta.format_version)));
    }
    let digest = sha256_hex(meta.spec.as_bytes());
    if digest != meta.spec_sha256 {
        return Err(migan_core::Error::Checksum(format!(
            "{}: spec hash {digest} differs from recorded {}",
            path.display(),
            meta.spec_sha256
        ))
        .into());
    }
    let spec: CheckpointSpec =
        toml::from_str(&meta.spec).map_err(|e| Error::format(path, KIND, format!("spec text: {e}")))?;
    if spec != CheckpointSpec::of(&meta.config) {
        return Err(Error::format(path, KIND, "stored spec disagrees with the stored training configuration"));
    }
    let mut gen = Vec::new();
    let mut disc = Vec::new();
    for (name, t) in archive.tensors {
        if let Some(n) = name.strip_prefix(GEN) {
            gen.push((n.to_string(), t));
        } else if let Some(n) = name.strip_prefix(DISC) {
            disc.push((n.to_string(), t));
        } else {
            return Err(Error::format(path, KIND, format!("unexpected tensor {name}")));
        }
    }
    let ckpt = Checkpoint {
        config: meta.config,
        step: meta.step,
        epoch: meta.epoch,
        val_loss: meta.val_loss,
        generator: NetworkSnapshot { spec: spec.generator, version: meta.generator_version, tensors: gen },
        discriminator: NetworkSnapshot { spec: spec.discriminator, version: meta.discriminator_version, tensors: disc },
    };
    // Shapes and names must match what the spec builds.
    ckpt.generator.restore()?;
    ckpt.discriminator.restore()?;
    Ok(ckpt)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    to_archive(ckpt).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    from_archive(Archive::load(path)?, path)
}

/// Loads a checkpoint and rejects it unless its spec hash equals `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &CheckpointSpec) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let found = CheckpointSpec::of(&ckpt.config);
    if found.hash() != expected.hash() {
        return Err(Error::format(
            path,
            KIND,
            format!("spec hash {} does not match the requested {}", found.hash(), expected.hash()),
        ));
    }
    Ok(ckpt)
}

/// The generator network of a checkpoint, ready for inference.
pub fn load_generator(path: &Path) -> Result<NetworkState> {
    Ok(load_checkpoint(path)?.generator.restore()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use migan_core::trainer::Trainer;

    fn ckpt() -> Checkpoint {
        let cfg = TrainConfig {
            g_base_filters: 4,
            d_base_filters: 2,
            ..TrainConfig::desk(Mode::Segmentation)
        };
        Trainer::new(cfg).unwrap().checkpoint(Some(3), Some(0.125))
    }

    #[test]
    fn round_trip_is_exact() {
        let c = ckpt();
        let back = from_archive(Archive::from_bytes(&to_archive(&c).to_bytes(), Path::new("c")).unwrap(), Path::new("c"))
            .unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn tampered_spec_text_is_rejected() {
        let mut a = to_archive(&ckpt());
        let spec = a.meta["spec"].as_str().unwrap().replace("input_size = 64", "input_size = 128");
        a.meta["spec"] = spec.into();
        let err = from_archive(a, Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Core(migan_core::Error::Checksum(_))), "{err}");
    }

    #[test]
    fn expecting_a_different_spec_fails() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let c = ckpt();
        save_checkpoint(&p, &c).unwrap();
        assert!(load_checkpoint_expecting(&p, &CheckpointSpec::of(&c.config)).is_ok());
        let other = CheckpointSpec::of(&TrainConfig::desk(Mode::Segmentation));
        assert_eq!(load_checkpoint_expecting(&p, &other).unwrap_err().exit_code(), 4);
    }
}
