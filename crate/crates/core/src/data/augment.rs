use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{zscore, Image, Mask, PreprocessedSample};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    /// Angles in degrees, counter-clockwise, each in `[0, 360)`.
    pub rotations: Vec<f64>,
    pub hflip: bool,
    /// Extra rotations at angles drawn from the seed.
    pub random_rotations: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            rotations: vec![0.0, 90.0, 180.0, 270.0],
            hflip: true,
            random_rotations: 0,
        }
    }
}

impl AugmentSpec {
    pub fn none() -> Self {
        AugmentSpec {
            rotations: Vec::new(),
            hflip: false,
            random_rotations: 0,
        }
    }
}

/// Source coordinate for output pixel `(y, x)` under a counter-clockwise
/// rotation by `deg` about the centre of an `s×s` grid.
fn inverse_map(y: usize, x: usize, s: usize, cos: f64, sin: f64) -> (f64, f64) {
    let c = (s as f64 - 1.0) / 2.0;
    let (dy, dx) = (y as f64 - c, x as f64 - c);
    // Rows grow downwards, so a visual CCW turn maps (dx, dy) through R(-θ).
    let sx = cos * dx - sin * dy;
    let sy = sin * dx + cos * dy;
    (sy + c, sx + c)
}

fn quarter_turns(deg: f64) -> Option<usize> {
    let q = deg / 90.0;
    (libm::fabs(q - libm::round(q)) < 1e-9).then(|| (libm::round(q) as i64).rem_euclid(4) as usize)
}

fn remap_square<T: Copy>(src: &[T], s: usize, stride: usize, turns: usize) -> Vec<T> {
    let mut out = src.to_vec();
    for i in 0..s {
        for j in 0..s {
            let (si, sj) = match turns {
                0 => (i, j),
                1 => (j, s - 1 - i),
                2 => (s - 1 - i, s - 1 - j),
                _ => (s - 1 - j, i),
            };
            let (d, o) = ((i * s + j) * stride, (si * s + sj) * stride);
            out[d..d + stride].copy_from_slice(&src[o..o + stride]);
        }
    }
    out
}

fn rotate_image(img: &Image, deg: f64) -> Image {
    let s = img.height;
    if let Some(t) = quarter_turns(deg) {
        return Image {
            height: s,
            width: s,
            data: remap_square(&img.data, s, 3, t),
        };
    }
    let (sin, cos) = libm::sincos(deg.to_radians());
    let mut out = Image::filled(s, s, -1.0);
    for y in 0..s {
        for x in 0..s {
            let (sy, sx) = inverse_map(y, x, s, cos, sin);
            if sy < 0.0 || sx < 0.0 || sy > (s - 1) as f64 || sx > (s - 1) as f64 {
                continue;
            }
            let (y0, x0) = (libm::floor(sy) as usize, libm::floor(sx) as usize);
            let (y1, x1) = ((y0 + 1).min(s - 1), (x0 + 1).min(s - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            for c in 0..3 {
                let top = (1.0 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
                let bot = (1.0 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
                out.data[(y * s + x) * 3 + c] = (1.0 - fy) * top + fy * bot;
            }
        }
    }
    out
}

fn rotate_mask(m: &Mask, deg: f64) -> Mask {
    let s = m.height;
    if let Some(t) = quarter_turns(deg) {
        return Mask {
            height: s,
            width: s,
            data: remap_square(&m.data, s, 1, t),
        };
    }
    let (sin, cos) = libm::sincos(deg.to_radians());
    let mut out = Mask::filled(s, s, false);
    for y in 0..s {
        for x in 0..s {
            let (sy, sx) = inverse_map(y, x, s, cos, sin);
            let (ry, rx) = (libm::round(sy), libm::round(sx));
            if ry >= 0.0 && rx >= 0.0 && ry < s as f64 && rx < s as f64 {
                out.data[y * s + x] = m.data[ry as usize * s + rx as usize];
            }
        }
    }
    out
}

fn finish(mut sample: PreprocessedSample, suffix: &str) -> PreprocessedSample {
    sample.mask.intersect(&sample.fov);
    sample.zscore = zscore(&sample.image, &sample.fov);
    if !suffix.is_empty() {
        sample.id = format!("{}_{suffix}", sample.id);
    }
    sample
}

/// Counter-clockwise rotation. Multiples of 90° are exact index permutations;
/// other angles resample (bilinear image, nearest masks) and fill uncovered
/// pixels with background.
pub fn rotate(sample: &PreprocessedSample, deg: f64) -> PreprocessedSample {
    if deg == 0.0 {
        return sample.clone();
    }
    let out = PreprocessedSample {
        image: rotate_image(&sample.image, deg),
        mask: rotate_mask(&sample.mask, deg),
        fov: rotate_mask(&sample.fov, deg),
        ..sample.clone()
    };
    finish(out, &format!("r{}", libm::round(deg * 100.0) / 100.0))
}

/// Left-right mirror.
pub fn flip_horizontal(sample: &PreprocessedSample) -> PreprocessedSample {
    let s = sample.size();
    let mut out = sample.clone();
    for y in 0..s {
        for x in 0..s {
            let (d, o) = (y * s + x, y * s + s - 1 - x);
            out.mask.data[d] = sample.mask.data[o];
            out.fov.data[d] = sample.fov.data[o];
            out.image.data[d * 3..d * 3 + 3].copy_from_slice(&sample.image.data[o * 3..o * 3 + 3]);
            out.zscore.data[d * 3..d * 3 + 3].copy_from_slice(&sample.zscore.data[o * 3..o * 3 + 3]);
        }
    }
    if out.id.ends_with("_f") {
        out.id.truncate(out.id.len() - 2);
    } else {
        out.id = format!("{}_f", out.id);
    }
    out
}

/// The original followed by every requested variant: each rotation, and its
/// mirror image when `hflip` is set.
pub fn augment(sample: &PreprocessedSample, spec: &AugmentSpec, seed: u64) -> Vec<PreprocessedSample> {
    let mut angles = vec![0.0];
    for &a in &spec.rotations {
        let a = a.rem_euclid(360.0);
        if !angles.contains(&a) {
            angles.push(a);
        }
    }
    let mut r = rng::stream(seed, "augment");
    for _ in 0..spec.random_rotations {
        angles.push(r.random_range(0.0..360.0));
    }
    let mut out = Vec::with_capacity(angles.len() * 2);
    for a in angles {
        let rotated = rotate(sample, a);
        if spec.hflip {
            let flipped = flip_horizontal(&rotated);
            out.push(rotated);
            out.push(flipped);
        } else {
            out.push(rotated);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PreprocessedSample {
        let s = 4;
        let mask = Mask::new(s, s, vec![1, 1, 1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0]).unwrap();
        let image = Image::new(s, s, (0..s * s * 3).map(|i| i as f64 / 48.0 - 0.5).collect()).unwrap();
        let fov = Mask::filled(s, s, true);
        PreprocessedSample {
            id: "a".into(),
            zscore: zscore(&image, &fov),
            image,
            mask,
            fov,
            original_size: (s, s),
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let s = sample();
        assert_eq!(flip_horizontal(&flip_horizontal(&s)), s);
    }

    #[test]
    fn zero_rotation_is_identity() {
        assert_eq!(rotate(&sample(), 0.0), sample());
    }

    #[test]
    fn quarter_turn_matches_index_oracle() {
        let s = sample();
        let r = rotate(&s, 90.0);
        // Counter-clockwise: the top row becomes the left column, bottom-up.
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r.mask.data[i * 4 + j], s.mask.data[j * 4 + 3 - i]);
            }
        }
        // Equivalently, transpose then flip vertically.
        let mut t = [0u8; 16];
        for i in 0..4 {
            for j in 0..4 {
                t[(3 - j) * 4 + i] = s.mask.data[i * 4 + j];
            }
        }
        assert_eq!(r.mask.data, t);
        let back = rotate(&rotate(&rotate(&r, 90.0), 90.0), 90.0);
        assert_eq!(back.mask, s.mask);
        assert_eq!(back.image, s.image);
    }

    #[test]
    fn arbitrary_angle_agrees_with_quarter_turn_for_masks() {
        let s = sample();
        // A tiny offset forces the resampling path.
        let a = rotate(&s, 90.0 + 1e-7);
        assert_eq!(a.mask, rotate(&s, 90.0).mask);
    }

    #[test]
    fn default_spec_gives_eight_variants() {
        let out = augment(&sample(), &AugmentSpec::default(), 0);
        assert_eq!(out.len(), 8);
        assert_eq!(out[0], sample());
        assert_eq!(augment(&sample(), &AugmentSpec::none(), 0), vec![sample()]);
        for v in &out {
            assert!(v.mask.data.iter().zip(&v.fov.data).all(|(m, f)| m <= f));
        }
    }

    #[test]
    fn random_angles_follow_the_seed() {
        let spec = AugmentSpec {
            random_rotations: 2,
            ..AugmentSpec::none()
        };
        let a = augment(&sample(), &spec, 5);
        assert_eq!(a.len(), 3);
        assert_eq!(a, augment(&sample(), &spec, 5));
        assert!(a[1].image.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
