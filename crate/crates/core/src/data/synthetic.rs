//! Procedural pseudo-fundus images with random branching vessel trees.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FundusSample, Image, Mask, MIN_SYNTHETIC_SIZE};
use crate::error::{bail, Result};
use crate::rng::{self, Rng};

/// Generation parameters; lengths are fractions of the image side so that a
/// dataset looks alike at every resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub fov_radius: f64,
    pub min_trunks: usize,
    pub max_trunks: usize,
    /// Trunk diameter as a fraction of the side.
    pub trunk_width: f64,
    /// Expected branch points per trunk.
    pub branches_per_trunk: f64,
    pub max_depth: usize,
    /// Accepted vessel fraction of the FOV; growth is retried outside it.
    pub target_fraction: (f64, f64),
    /// Per-channel vessel darkening at full coverage.
    pub vessel_contrast: [f64; 3],
    pub noise_std: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            fov_radius: 0.46,
            min_trunks: 4,
            max_trunks: 6,
            trunk_width: 0.05,
            branches_per_trunk: 2.5,
            max_depth: 3,
            target_fraction: (0.05, 0.18),
            vessel_contrast: [0.25, 0.55, 0.45],
            noise_std: 4.0,
        }
    }
}

struct Branch {
    y: f64,
    x: f64,
    angle: f64,
    width: f64,
    length: f64,
    depth: usize,
}

fn normal(r: &mut Rng) -> f64 {
    r.sample(StandardNormal)
}

fn stamp(cov: &mut [f64], s: usize, y: f64, x: f64, radius: f64) {
    let reach = radius + 1.0;
    let y0 = libm::floor(y - reach).max(0.0) as usize;
    let x0 = libm::floor(x - reach).max(0.0) as usize;
    let y1 = (libm::ceil(y + reach) as usize).min(s - 1);
    let x1 = (libm::ceil(x + reach) as usize).min(s - 1);
    for py in y0..=y1 {
        for px in x0..=x1 {
            let d = libm::hypot(py as f64 - y, px as f64 - x);
            let v = (radius - d + 0.5).clamp(0.0, 1.0);
            let c = &mut cov[py * s + px];
            if v > *c {
                *c = v;
            }
        }
    }
}

/// Soft vessel coverage in `[0, 1]`; pixels at coverage ≥ 0.5 are vessel.
fn grow_tree(r: &mut Rng, s: usize, p: &SyntheticParams, disc: (f64, f64), width_scale: f64) -> Vec<f64> {
    let sf = s as f64;
    let centre = (sf - 1.0) / 2.0;
    let radius = p.fov_radius * sf;
    let step = 0.5;
    let turn_sigma = 0.1 * libm::sqrt(step * MIN_SYNTHETIC_SIZE as f64 / sf);
    let branch_rate = p.branches_per_trunk / radius;
    let min_width = 0.9;
    let mut cov = vec![0.0; s * s];
    let trunks = r.random_range(p.min_trunks..=p.max_trunks);
    let phase = r.random_range(0.0..core::f64::consts::TAU);
    let mut stack: Vec<Branch> = (0..trunks)
        .map(|k| Branch {
            y: disc.0,
            x: disc.1,
            angle: phase + core::f64::consts::TAU * k as f64 / trunks as f64 + r.random_range(-0.3..0.3),
            width: p.trunk_width * sf * width_scale * r.random_range(0.85..1.15),
            length: radius * r.random_range(0.9..1.4),
            depth: 0,
        })
        .collect();
    while let Some(mut b) = stack.pop() {
        let mut travelled = 0.0;
        while travelled < b.length && b.width >= min_width {
            b.angle += turn_sigma * normal(r);
            b.y += step * libm::sin(b.angle);
            b.x += step * libm::cos(b.angle);
            travelled += step;
            if libm::hypot(b.y - centre, b.x - centre) > radius {
                break;
            }
            stamp(&mut cov, s, b.y, b.x, b.width / 2.0);
            b.width *= 1.0 - 0.25 * step / radius;
            if b.depth < p.max_depth && r.random::<f64>() < branch_rate * step {
                let side = if r.random::<bool>() { 1.0 } else { -1.0 };
                let child_width = b.width * r.random_range(0.6..0.8);
                stack.push(Branch {
                    y: b.y,
                    x: b.x,
                    angle: b.angle + side * r.random_range(0.4..1.0),
                    width: child_width,
                    length: (b.length - travelled) * r.random_range(0.5..0.9),
                    depth: b.depth + 1,
                });
                b.width *= 0.92;
            }
        }
    }
    cov
}

fn render(r: &mut Rng, s: usize, p: &SyntheticParams, cov: &[f64], fov: &Mask, disc: (f64, f64)) -> Vec<f64> {
    let sf = s as f64;
    let centre = (sf - 1.0) / 2.0;
    let radius = p.fov_radius * sf;
    let base = [r.random_range(170.0..220.0), r.random_range(80.0..115.0), r.random_range(40.0..70.0)];
    let depth: Vec<f64> = p.vessel_contrast.iter().map(|c| c * r.random_range(0.85..1.1)).collect();
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                r.random_range(0.03..0.08),
                r.random_range(0.5..2.0) * core::f64::consts::TAU / sf,
                r.random_range(0.0..core::f64::consts::TAU),
                r.random_range(0.0..core::f64::consts::TAU),
            )
        })
        .collect();
    let disc_sigma = 0.06 * sf;
    let mut out = vec![0.0; s * s * 3];
    for y in 0..s {
        for x in 0..s {
            let i = y * s + x;
            if fov.data[i] == 0 {
                continue;
            }
            let (fy, fx) = (y as f64, x as f64);
            let rho = libm::hypot(fy - centre, fx - centre) / radius;
            let mut light = 1.0 - 0.35 * rho * rho;
            for &(amp, freq, dir, ph) in &waves {
                light += amp * libm::cos(freq * (fx * libm::cos(dir) + fy * libm::sin(dir)) + ph);
            }
            let dd = (fy - disc.0).powi(2) + (fx - disc.1).powi(2);
            let glow = 60.0 * libm::exp(-dd / (2.0 * disc_sigma * disc_sigma));
            for c in 0..3 {
                let v = (base[c] * light + glow) * (1.0 - cov[i] * depth[c]) + p.noise_std * normal(r);
                out[i * 3 + c] = libm::round(v.clamp(0.0, 255.0));
            }
        }
    }
    out
}

fn one_sample(seed: u64, index: usize, s: usize, p: &SyntheticParams) -> FundusSample {
    let mut r = rng::indexed_stream(seed, "synthetic", index as u64);
    let sf = s as f64;
    let centre = (sf - 1.0) / 2.0;
    let radius = p.fov_radius * sf;
    let mut fov = Mask::filled(s, s, false);
    for y in 0..s {
        for x in 0..s {
            fov.data[y * s + x] = (libm::hypot(y as f64 - centre, x as f64 - centre) <= radius) as u8;
        }
    }
    let area = fov.count() as f64;
    let side = if r.random::<bool>() { 1.0 } else { -1.0 };
    let disc = (centre + 0.05 * sf * normal(&mut r), centre + side * 0.22 * sf);

    let (lo, hi) = p.target_fraction;
    let mut scale = 1.0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..24 {
        let cov = grow_tree(&mut r, s, p, disc, scale);
        let vessels = cov
            .iter()
            .zip(&fov.data)
            .filter(|(&c, &f)| c >= 0.5 && f == 1)
            .count() as f64;
        let frac = vessels / area;
        let miss = if frac < lo { lo - frac } else { (frac - hi).max(0.0) };
        if best.as_ref().is_none_or(|(m, _)| miss < *m) {
            best = Some((miss, cov));
        }
        if miss == 0.0 {
            break;
        }
        scale *= if frac < lo { 1.1 } else { 0.9 };
    }
    let cov = best.expect("at least one attempt").1;
    let mut mask = Mask {
        height: s,
        width: s,
        data: cov.iter().map(|&c| (c >= 0.5) as u8).collect(),
    };
    mask.intersect(&fov);
    let image = Image {
        height: s,
        width: s,
        data: render(&mut r, s, p, &cov, &fov, disc),
    };
    FundusSample {
        id: format!("synth_{index:04}"),
        image,
        mask,
        fov,
        original_size: (s, s),
    }
}

/// `n` samples of side `size`; sample `i` depends only on `(seed, i)`.
pub fn make_synthetic_dataset(n: usize, size: usize, seed: u64, params: &SyntheticParams) -> Result<Vec<FundusSample>> {
    if size < MIN_SYNTHETIC_SIZE {
        bail!(Config, "synthetic size must be at least {MIN_SYNTHETIC_SIZE}, got {size}");
    }
    if n == 0 {
        bail!(Config, "synthetic dataset needs at least one sample");
    }
    if params.min_trunks == 0 || params.min_trunks > params.max_trunks || !(params.trunk_width > 0.0) {
        bail!(Config, "invalid synthetic parameters {params:?}");
    }
    Ok((0..n).map(|i| one_sample(seed, i, size, params)).collect())
}
