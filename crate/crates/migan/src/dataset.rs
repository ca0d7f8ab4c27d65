//! Dataset directories: `images/`, `masks/` and optional `fov/`, paired by
//! normalised file stem, plus PNG export and preprocessed-array bundles.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use migan_core::data::{stare_fov, DatasetKind, FundusSample, Image, Mask, PreprocessedSample};
use migan_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::archive::{write_file, Archive};
use crate::error::{Error, Result};

const EXTENSIONS: [&str; 6] = ["png", "tif", "tiff", "gif", "ppm", "pgm"];

/// Suffixes that name the role of a file rather than the sample, with the
/// annotator rank they imply.
const SUFFIXES: [(&str, u8); 7] = [
    ("_mask", 0),
    ("_training", 0),
    ("_test", 0),
    ("_manual1", 0),
    ("_manual2", 1),
    (".ah", 0),
    (".vk", 1),
];

/// Sample key and annotator rank of a file name: `21_manual1.gif → ("21", 0)`,
/// `im0001.vk.ppm → ("im0001", 1)`.
pub fn pairing_key(path: &Path) -> Option<(String, u8)> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !EXTENSIONS.contains(&ext.as_str()) {
        return None;
    }
    let mut stem = path.file_stem()?.to_str()?.to_string();
    let mut rank = 0;
    'strip: loop {
        for (suffix, r) in SUFFIXES {
            if stem.len() > suffix.len() && stem.ends_with(suffix) {
                stem.truncate(stem.len() - suffix.len());
                rank = rank.max(r);
                continue 'strip;
            }
        }
        break;
    }
    Some((stem, rank))
}

/// Image files in `dir` keyed by pairing key, keeping the lowest annotator
/// rank and then the lexicographically first name.
fn index_dir(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut found: BTreeMap<String, (u8, PathBuf)> = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        let Some((key, rank)) = pairing_key(&p) else { continue };
        match found.get(&key) {
            Some((r, _)) if *r <= rank => {}
            _ => {
                found.insert(key, (rank, p));
            }
        }
    }
    Ok(found.into_iter().map(|(k, (_, p))| (k, p)).collect())
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn read_image(path: &Path) -> Result<Image> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(Image::new(h as usize, w as usize, rgb.into_raw().into_iter().map(f64::from).collect())?)
}

/// Binary mask: gray level above 127 is foreground.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let g = open(path)?.to_luma8();
    let (w, h) = g.dimensions();
    Ok(Mask::new(h as usize, w as usize, g.into_raw().into_iter().map(|v| (v > 127) as u8).collect())?)
}

/// Gray image scaled to `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let g = open(path)?.to_luma8();
    let (w, h) = g.dimensions();
    Ok((h as usize, w as usize, g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()))
}

fn save(path: &Path, img: impl FnOnce(&mut Vec<u8>) -> image::ImageResult<()>) -> Result<()> {
    let mut bytes = Vec::new();
    img(&mut bytes).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    write_file(path, &bytes)
}

fn png_encoder(buf: &mut Vec<u8>) -> image::codecs::png::PngEncoder<&mut Vec<u8>> {
    image::codecs::png::PngEncoder::new(buf)
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// RGB PNG of an image in `[0, 255]`.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let buf: RgbImage = ImageBuffer::<Rgb<u8>, _>::from_raw(
        img.width as u32,
        img.height as u32,
        img.data.iter().map(|&v| to_u8(v)).collect(),
    )
    .expect("buffer matches dimensions");
    save(path, |b| buf.write_with_encoder(png_encoder(b)))
}

/// Gray PNG with foreground at 255.
pub fn write_mask(path: &Path, m: &Mask) -> Result<()> {
    write_gray(path, m.height, m.width, &m.to_f64())
}

/// Gray PNG of values in `[0, 1]`.
pub fn write_gray(path: &Path, height: usize, width: usize, values: &[f64]) -> Result<()> {
    let buf: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(
        width as u32,
        height as u32,
        values.iter().map(|&v| to_u8(v * 255.0)).collect(),
    )
    .expect("buffer matches dimensions");
    save(path, |b| buf.write_with_encoder(png_encoder(b)))
}

fn dir_if_present(root: &Path, name: &str) -> Option<PathBuf> {
    let d = root.join(name);
    d.is_dir().then_some(d)
}

/// Reads every image under `root`, pairing masks and FOVs by key. Missing
/// FOV files are derived from the image. With `require_masks` unset,
/// samples without a mask get an empty one.
pub fn load_samples(root: &Path, kind: DatasetKind, require_masks: bool) -> Result<Vec<FundusSample>> {
    let Some(images_dir) = dir_if_present(root, "images") else {
        return Err(migan_core::Error::InsufficientData(format!("{} has no images/ directory", root.display())).into());
    };
    let images = index_dir(&images_dir)?;
    if images.is_empty() {
        return Err(migan_core::Error::InsufficientData(format!("no images in {}", images_dir.display())).into());
    }
    let masks = match dir_if_present(root, "masks") {
        Some(d) => index_dir(&d)?,
        None if require_masks => {
            return Err(migan_core::Error::MissingPair(format!("{} has no masks/ directory", root.display())).into())
        }
        None => BTreeMap::new(),
    };
    let fovs = match dir_if_present(root, "fov") {
        Some(d) => index_dir(&d)?,
        None => BTreeMap::new(),
    };
    let mut out = Vec::with_capacity(images.len());
    for (key, path) in &images {
        let image = read_image(path)?;
        let mask = match masks.get(key) {
            Some(p) => read_mask(p)?,
            None if require_masks => {
                return Err(migan_core::Error::MissingPair(format!("no mask for image {}", path.display())).into())
            }
            None => Mask::filled(image.height, image.width, false),
        };
        let fov = match fovs.get(key) {
            Some(p) => read_mask(p)?,
            None => {
                log::info!("{key}: no FOV file, deriving one from luminance");
                stare_fov(&image)
            }
        };
        out.push(FundusSample::new(key.clone(), image, mask, fov)?);
    }
    for key in masks.keys().filter(|k| !images.contains_key(*k)) {
        log::warn!("mask {key} has no matching image");
    }
    log::debug!("loaded {} {} samples from {}", out.len(), kind.name(), root.display());
    Ok(out)
}

pub fn load_dataset(root: &Path, kind: DatasetKind) -> Result<Vec<FundusSample>> {
    load_samples(root, kind, true)
}

/// Writes `images/`, `masks/`, `fov/` PNGs and `manifest.json`.
pub fn export_dataset(out: &Path, samples: &[FundusSample], manifest: &serde_json::Value) -> Result<()> {
    for s in samples {
        write_image(&out.join("images").join(format!("{}.png", s.id)), &s.image)?;
        write_mask(&out.join("masks").join(format!("{}.png", s.id)), &s.mask)?;
        write_mask(&out.join("fov").join(format!("{}.png", s.id)), &s.fov)?;
    }
    write_json(&out.join("manifest.json"), manifest)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

pub const PREPROCESSED_KIND: &str = "migan-preprocessed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedManifest {
    pub kind: DatasetKind,
    pub input_size: usize,
    pub samples: Vec<PreprocessedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedEntry {
    pub id: String,
    pub original_size: (usize, usize),
    pub vessel_pixels: usize,
    pub fov_pixels: usize,
}

/// `preprocessed.marc` (per sample `{id}/image`, `{id}/zscore`, `{id}/mask`,
/// `{id}/fov`, each `S×S[×3]`) and `manifest.json`.
pub fn write_preprocessed(out: &Path, kind: DatasetKind, samples: &[PreprocessedSample]) -> Result<()> {
    let size = samples.first().map_or(0, PreprocessedSample::size);
    let mut tensors = Vec::with_capacity(samples.len() * 4);
    for s in samples {
        let hw3 = [size, size, 3];
        tensors.push((format!("{}/image", s.id), Tensor::from_vec(&hw3, s.image.data.clone())?));
        tensors.push((format!("{}/zscore", s.id), Tensor::from_vec(&hw3, s.zscore.data.clone())?));
        tensors.push((format!("{}/mask", s.id), Tensor::from_vec(&[size, size], s.mask.to_f64())?));
        tensors.push((format!("{}/fov", s.id), Tensor::from_vec(&[size, size], s.fov.to_f64())?));
    }
    let manifest = PreprocessedManifest {
        kind,
        input_size: size,
        samples: samples
            .iter()
            .map(|s| PreprocessedEntry {
                id: s.id.clone(),
                original_size: s.original_size,
                vessel_pixels: s.mask.count(),
                fov_pixels: s.fov.count(),
            })
            .collect(),
    };
    Archive::new(PREPROCESSED_KIND, serde_json::to_value(&manifest).expect("manifest serializes"), tensors)
        .save(&out.join("preprocessed.marc"))?;
    write_json(&out.join("manifest.json"), &manifest)
}

pub fn read_preprocessed(dir: &Path) -> Result<(PreprocessedManifest, Vec<PreprocessedSample>)> {
    let path = dir.join("preprocessed.marc");
    let archive = Archive::load_kind(&path, PREPROCESSED_KIND)?;
    let manifest: PreprocessedManifest =
        serde_json::from_value(archive.meta).map_err(|e| Error::format(&path, PREPROCESSED_KIND, e.to_string()))?;
    let tensors: BTreeMap<String, Tensor> = archive.tensors.into_iter().collect();
    let size = manifest.input_size;
    let get = |id: &str, part: &str| {
        tensors
            .get(&format!("{id}/{part}"))
            .map(|t| t.data().to_vec())
            .ok_or_else(|| Error::format(&path, PREPROCESSED_KIND, format!("missing {id}/{part}")))
    };
    let to_mask = |v: Vec<f64>| Mask::new(size, size, v.into_iter().map(|x| (x > 0.5) as u8).collect());
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        samples.push(PreprocessedSample {
            id: e.id.clone(),
            image: Image::new(size, size, get(&e.id, "image")?)?,
            zscore: Image::new(size, size, get(&e.id, "zscore")?)?,
            mask: to_mask(get(&e.id, "mask")?)?,
            fov: to_mask(get(&e.id, "fov")?)?,
            original_size: e.original_size,
        });
    }
    Ok((manifest, samples))
}
