//! VGG-19 weights container: one archive of `block{b}.conv{i}.kernel`
//! (`out×in×3×3`) and `block{b}.conv{i}.bias` tensors whose header doubles
//! as the manifest of names and shapes.

use std::path::Path;

use migan_core::features::Extractor;
use migan_core::Tensor;

use crate::archive::Archive;
use crate::error::Result;

pub const KIND: &str = "migan-vgg19-weights";

pub fn save_vgg_weights(path: &Path, tensors: &[(String, Tensor)], source: &str) -> Result<()> {
    let meta = serde_json::json!({ "layout": "out,in,kh,kw", "source": source });
    Archive::new(KIND, meta, tensors.to_vec()).save(path)
}

/// Reads a container; a missing or foreign file is a weights-format error
/// and a corrupted payload a checksum error.
pub fn load_vgg_weights(path: &Path) -> Result<Vec<(String, Tensor)>> {
    if !path.is_file() {
        return Err(migan_core::Error::WeightsFormat(format!("no weights container at {}", path.display())).into());
    }
    let archive = Archive::load(path).map_err(|e| match e {
        crate::Error::Format { message, .. } => migan_core::Error::WeightsFormat(message).into(),
        other => other,
    })?;
    if archive.kind != KIND {
        return Err(migan_core::Error::WeightsFormat(format!("{} holds {:?}", path.display(), archive.kind)).into());
    }
    Ok(archive.tensors)
}

pub fn load_vgg_extractor(path: &Path) -> Result<Extractor> {
    Ok(Extractor::vgg19(&load_vgg_weights(path)?)?)
}
