//! Fundus samples, preprocessing to a square network resolution, the
//! train/validation split, and restoration of predictions to the original
//! geometry.

mod augment;
mod fov;
pub mod resize;
mod synthetic;

pub use augment::{augment, flip_horizontal, rotate, AugmentSpec};
pub use fov::stare_fov;
pub use synthetic::{make_synthetic_dataset, SyntheticParams};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Network resolution used unless configured otherwise.
pub const DEFAULT_SIZE: usize = 512;
/// Smallest side accepted for synthetic data.
pub const MIN_SYNTHETIC_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Drive,
    Stare,
    Synthetic,
}

impl DatasetKind {
    /// Expected `(height, width)` of real dataset images.
    pub fn geometry(self) -> Option<(usize, usize)> {
        match self {
            DatasetKind::Drive => Some((584, 565)),
            DatasetKind::Stare => Some((605, 700)),
            DatasetKind::Synthetic => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Drive => "drive",
            DatasetKind::Stare => "stare",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "drive" => DatasetKind::Drive,
            "stare" => DatasetKind::Stare,
            "synthetic" => DatasetKind::Synthetic,
            _ => bail!(Config, "unknown dataset kind {s:?}"),
        })
    }
}

/// Interleaved `H×W×3` image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            bail!(ShapeMismatch, "image {height}x{width}x3 with {} values", data.len());
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image {
            height,
            width,
            data: alloc::vec![value; height * width * 3],
        }
    }

    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn from_planes(height: usize, width: usize, planes: [&[f64]; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for i in 0..height * width {
            for p in &planes {
                data.push(p[i]);
            }
        }
        Image { height, width, data }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }
}

/// Binary `H×W` map with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            bail!(ShapeMismatch, "mask {height}x{width} with {} values", data.len());
        }
        if data.iter().any(|&v| v > 1) {
            bail!(Domain, "mask values must be 0 or 1");
        }
        Ok(Mask { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Mask {
            height,
            width,
            data: alloc::vec![value as u8; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// `self &= other`.
    pub fn intersect(&mut self, other: &Mask) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a &= b;
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundusSample {
    pub id: String,
    /// Pixel values in `[0, 255]`.
    pub image: Image,
    pub mask: Mask,
    pub fov: Mask,
    /// `(height, width)`.
    pub original_size: (usize, usize),
}

impl FundusSample {
    /// Validates shapes and enforces `mask ≤ fov`.
    pub fn new(id: impl Into<String>, image: Image, mut mask: Mask, fov: Mask) -> Result<Self> {
        let id = id.into();
        let dims = (image.height, image.width);
        if (mask.height, mask.width) != dims || (fov.height, fov.width) != dims {
            bail!(
                ShapeMismatch,
                "{id}: image {:?}, mask {:?}, fov {:?}",
                dims,
                (mask.height, mask.width),
                (fov.height, fov.width)
            );
        }
        mask.intersect(&fov);
        Ok(FundusSample {
            id,
            image,
            mask,
            fov,
            original_size: dims,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedSample {
    pub id: String,
    /// Values in `[-1, 1]`.
    pub image: Image,
    pub mask: Mask,
    pub fov: Mask,
    /// Per-channel standardised over FOV pixels; zero outside the FOV.
    pub zscore: Image,
    pub original_size: (usize, usize),
}

impl PreprocessedSample {
    pub fn size(&self) -> usize {
        self.image.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<PreprocessedSample>,
    pub val: Vec<PreprocessedSample>,
    pub seed: u64,
}

/// `[0, 255] → [-1, 1]`.
pub fn scale_to_unit(v: f64) -> f64 {
    v / 127.5 - 1.0
}

/// Inverse of [`scale_to_unit`].
pub fn unscale(v: f64) -> f64 {
    (v + 1.0) * 127.5
}

/// Region `(top, left, height, width)` of the original image that is resized
/// to the network resolution.
pub fn crop_box(kind: DatasetKind, height: usize, width: usize) -> (usize, usize, usize, usize) {
    match kind {
        DatasetKind::Drive => {
            let side = height.min(width);
            ((height - side) / 2, (width - side) / 2, side, side)
        }
        _ => (0, 0, height, width),
    }
}

fn crop<T: Copy>(src: &[T], width: usize, stride: usize, bx: (usize, usize, usize, usize)) -> Vec<T> {
    let (top, left, h, w) = bx;
    let mut out = Vec::with_capacity(h * w * stride);
    for y in top..top + h {
        let start = (y * width + left) * stride;
        out.extend_from_slice(&src[start..start + w * stride]);
    }
    out
}

/// Per-channel standardisation using statistics over FOV pixels (all pixels
/// when the FOV is empty). Constant channels map to 0.
pub fn zscore(image: &Image, fov: &Mask) -> Image {
    let n = image.height * image.width;
    let use_all = fov.count() == 0;
    let inside = |i: usize| use_all || fov.data[i] == 1;
    let mut out = Image::filled(image.height, image.width, 0.0);
    for c in 0..3 {
        let (mut sum, mut count) = (0.0, 0usize);
        for i in (0..n).filter(|&i| inside(i)) {
            sum += image.data[i * 3 + c];
            count += 1;
        }
        let mean = sum / count as f64;
        let mut var = 0.0;
        for i in (0..n).filter(|&i| inside(i)) {
            let d = image.data[i * 3 + c] - mean;
            var += d * d;
        }
        let std = libm::sqrt(var / count as f64);
        if std < 1e-12 {
            continue;
        }
        for i in (0..n).filter(|&i| inside(i)) {
            out.data[i * 3 + c] = (image.data[i * 3 + c] - mean) / std;
        }
    }
    out
}

/// Crops (DRIVE), resizes to `size×size` (bicubic for the image, nearest for
/// the masks) and rescales to `[-1, 1]`.
pub fn preprocess(sample: &FundusSample, kind: DatasetKind, size: usize) -> Result<PreprocessedSample> {
    let (h, w) = (sample.image.height, sample.image.width);
    match kind.geometry() {
        Some(g) if g != (h, w) => {
            bail!(ShapeMismatch, "{}: {} images are {:?}, got {:?}", sample.id, kind.name(), g, (h, w))
        }
        None if h != w || h < MIN_SYNTHETIC_SIZE => {
            bail!(ShapeMismatch, "{}: synthetic images must be square and at least {MIN_SYNTHETIC_SIZE}, got {h}x{w}", sample.id)
        }
        _ => {}
    }
    if size < 8 {
        bail!(Config, "target size {size} too small");
    }
    let bx = crop_box(kind, h, w);
    let (ch, cw) = (bx.2, bx.3);
    let pixels = crop(&sample.image.data, w, 3, bx);
    let cropped = Image {
        height: ch,
        width: cw,
        data: pixels,
    };
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            resize::bicubic(&cropped.plane(c), ch, cw, size, size)
                .into_iter()
                .map(|v| scale_to_unit(v.clamp(0.0, 255.0)))
                .collect()
        })
        .collect();
    let image = Image::from_planes(size, size, [&planes[0], &planes[1], &planes[2]]);
    let fov = Mask {
        height: size,
        width: size,
        data: resize::nearest(&crop(&sample.fov.data, w, 1, bx), ch, cw, size, size),
    };
    let mut mask = Mask {
        height: size,
        width: size,
        data: resize::nearest(&crop(&sample.mask.data, w, 1, bx), ch, cw, size, size),
    };
    mask.intersect(&fov);
    let zscore = zscore(&image, &fov);
    Ok(PreprocessedSample {
        id: sample.id.clone(),
        image,
        mask,
        fov,
        zscore,
        original_size: (h, w),
    })
}

/// Deterministic 19:1 partition; validation gets `max(1, round(n/20))`.
pub fn split_train_val(samples: Vec<PreprocessedSample>, seed: u64) -> Result<DatasetSplit> {
    let n = samples.len();
    if n < 2 {
        bail!(InsufficientData, "need at least 2 samples to split, got {n}");
    }
    let n_val = ((n as f64 / 20.0).round() as usize).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let mut is_val = alloc::vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let mut train = Vec::with_capacity(n - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (s, v) in samples.into_iter().zip(is_val) {
        if v {
            val.push(s)
        } else {
            train.push(s)
        }
    }
    Ok(DatasetSplit { train, val, seed })
}

/// Maps a `side×side` probability map back to the sample's original
/// geometry and zeroes everything outside its FOV.
pub fn restore_original(pred: &[f64], side: usize, sample: &FundusSample, kind: DatasetKind) -> Result<Vec<f64>> {
    if pred.len() != side * side {
        bail!(ShapeMismatch, "prediction has {} values for side {side}", pred.len());
    }
    let (h, w) = (sample.fov.height, sample.fov.width);
    let (top, left, ch, cw) = crop_box(kind, h, w);
    let up = resize::bicubic(pred, side, side, ch, cw);
    let mut out = alloc::vec![0.0; h * w];
    for y in 0..ch {
        for x in 0..cw {
            let i = (top + y) * w + left + x;
            out[i] = up[y * cw + x].clamp(0.0, 1.0) * sample.fov.data[i] as f64;
        }
    }
    Ok(out)
}

fn stack_planes(samples: &[&PreprocessedSample], channels: usize, get: impl Fn(&PreprocessedSample, usize) -> f64) -> Result<Tensor> {
    let Some(first) = samples.first() else {
        bail!(InsufficientData, "empty batch");
    };
    let s = first.size();
    let mut data = Vec::with_capacity(samples.len() * channels * s * s);
    for sample in samples {
        if sample.size() != s {
            bail!(ShapeMismatch, "{}: batch mixes sizes {} and {s}", sample.id, sample.size());
        }
        for c in 0..channels {
            for i in 0..s * s {
                data.push(get(sample, i * channels + c));
            }
        }
    }
    Tensor::from_vec(&[samples.len(), channels, s, s], data)
}

/// `N×3×S×S` batch of `[-1, 1]` images.
pub fn image_batch(samples: &[&PreprocessedSample]) -> Result<Tensor> {
    stack_planes(samples, 3, |s, i| s.image.data[i])
}

/// `N×3×S×S` batch of standardised images.
pub fn zscore_batch(samples: &[&PreprocessedSample]) -> Result<Tensor> {
    stack_planes(samples, 3, |s, i| s.zscore.data[i])
}

/// `N×1×S×S` batch of `{0, 1}` vessel masks.
pub fn mask_batch(samples: &[&PreprocessedSample]) -> Result<Tensor> {
    stack_planes(samples, 1, |s, i| s.mask.data[i] as f64)
}

/// `N×1×S×S` batch of `{0, 1}` FOV masks.
pub fn fov_batch(samples: &[&PreprocessedSample]) -> Result<Tensor> {
    stack_planes(samples, 1, |s, i| s.fov.data[i] as f64)
}

/// Human-readable summary used in logs.
pub fn describe(sample: &PreprocessedSample) -> String {
    format!(
        "{} ({}x{} from {}x{}, {} vessel px)",
        sample.id,
        sample.size(),
        sample.size(),
        sample.original_size.0,
        sample.original_size.1,
        sample.mask.count()
    )
}
