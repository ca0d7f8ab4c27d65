//! Objective terms. Every reduction over batch and pixels is a mean, except
//! the per-image sums inside the TV, style and content terms, which are
//! then averaged over the batch.
//!
//! Each loss has a `_grad` twin returning the value together with the
//! gradient with respect to its generated (differentiable) argument.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::features::{FeatureKey, FeatureSet, BLOCKS};
use crate::tensor::Tensor;

/// Clip applied to every log argument: `[EPS, 1 - EPS]`.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_dev: f64,
    pub lambda_seg: f64,
    pub omega_cont: f64,
    pub omega_sty: f64,
    pub omega_tv: f64,
    /// Style weight per block, index 0 for block 1.
    pub block_weights: [f64; BLOCKS],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_dev: 10.0,
            lambda_seg: 10.0,
            omega_cont: 1.0,
            omega_sty: 10.0,
            omega_tv: 100.0,
            block_weights: [0.2; BLOCKS],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let scalars = [self.lambda_dev, self.lambda_seg, self.omega_cont, self.omega_sty, self.omega_tv];
        if scalars.iter().chain(&self.block_weights).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            bail!(Config, "loss weights must be finite and non-negative: {self:?}");
        }
        Ok(())
    }
}

/// Which generator objective is being optimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SynthesisL1,
    SynthesisStyle,
    Segmentation,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SynthesisL1 => "synthesis_l1",
            Mode::SynthesisStyle => "synthesis_style",
            Mode::Segmentation => "segmentation",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        Ok(match s {
            "synthesis_l1" => Mode::SynthesisL1,
            "synthesis_style" => Mode::SynthesisStyle,
            "segmentation" => Mode::Segmentation,
            _ => bail!(Config, "unknown mode {s:?}"),
        })
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        bail!(ShapeMismatch, "{what}: shapes {:?} and {:?}", a.shape(), b.shape());
    }
    Ok(())
}

/// Checks `v ∈ [0, 1]` and returns it clipped to `[EPS, 1 - EPS]`.
fn clip_prob(v: f64, what: &str) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        bail!(Domain, "{what}: probability {v} outside [0, 1]");
    }
    Ok(v.clamp(EPS, 1.0 - EPS))
}

/// Derivative of `ln(clip(v))` with respect to `v`; zero where clipped.
fn dlog(v: f64) -> f64 {
    if v < EPS || v > 1.0 - EPS {
        0.0
    } else {
        1.0 / v
    }
}

pub fn l1_deviation(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    Ok(l1_deviation_grad(x, x_hat)?.0)
}

/// Value and gradient with respect to `x_hat`.
pub fn l1_deviation_grad(x: &Tensor, x_hat: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(x, x_hat, "l1_deviation")?;
    let n = x.len().max(1) as f64;
    let mut g = Tensor::zeros(x.shape());
    let mut sum = 0.0;
    for ((gv, &a), &b) in g.data_mut().iter_mut().zip(x.data()).zip(x_hat.data()) {
        let d = b - a;
        sum += d.abs();
        *gv = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, g))
}

/// Non-saturating generator loss `mean(-ln D(G(y, z)))`.
pub fn generator_adv_loss(d_fake: &[f64]) -> Result<f64> {
    Ok(generator_adv_loss_grad(d_fake)?.0)
}

pub fn generator_adv_loss_grad(d_fake: &[f64]) -> Result<(f64, Vec<f64>)> {
    if d_fake.is_empty() {
        bail!(ShapeMismatch, "generator_adv_loss: empty batch");
    }
    let n = d_fake.len() as f64;
    let mut sum = 0.0;
    let mut g = Vec::with_capacity(d_fake.len());
    for &d in d_fake {
        sum -= libm::log(clip_prob(d, "generator_adv_loss")?);
        g.push(-dlog(d) / n);
    }
    Ok((sum / n, g))
}

/// Negated discriminator objective:
/// `mean(-ln D(x)) + mean(-ln(1 - D(G(y, z))))`.
pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    Ok(discriminator_loss_grad(d_real, d_fake)?.0)
}

/// Value and gradients with respect to `d_real` and `d_fake`.
pub fn discriminator_loss_grad(d_real: &[f64], d_fake: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if d_real.is_empty() || d_fake.is_empty() {
        bail!(ShapeMismatch, "discriminator_loss: empty batch");
    }
    let (nr, nf) = (d_real.len() as f64, d_fake.len() as f64);
    let mut real = 0.0;
    let mut g_real = Vec::with_capacity(d_real.len());
    for &d in d_real {
        real -= libm::log(clip_prob(d, "discriminator_loss")?);
        g_real.push(-dlog(d) / nr);
    }
    let mut fake = 0.0;
    let mut g_fake = Vec::with_capacity(d_fake.len());
    for &d in d_fake {
        fake -= libm::log(1.0 - clip_prob(d, "discriminator_loss")?);
        g_fake.push(dlog(1.0 - d) / nf);
    }
    Ok((real / nr + fake / nf, g_real, g_fake))
}

/// Pixel-mean binary cross-entropy. `y` may be soft but must lie in `[0, 1]`.
pub fn seg_bce(y: &Tensor, y_hat: &Tensor) -> Result<f64> {
    Ok(seg_bce_grad(y, y_hat)?.0)
}

/// Value and gradient with respect to `y_hat`.
pub fn seg_bce_grad(y: &Tensor, y_hat: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(y, y_hat, "seg_bce")?;
    let n = y.len().max(1) as f64;
    let mut g = Tensor::zeros(y.shape());
    let mut sum = 0.0;
    for ((gv, &t), &p) in g.data_mut().iter_mut().zip(y.data()).zip(y_hat.data()) {
        if !(0.0..=1.0).contains(&t) {
            bail!(Domain, "seg_bce: target {t} outside [0, 1]");
        }
        let pc = clip_prob(p, "seg_bce")?;
        sum -= t * libm::log(pc) + (1.0 - t) * libm::log(1.0 - pc);
        *gv = (-t * dlog(p) + (1.0 - t) * dlog(1.0 - p)) / n;
    }
    Ok((sum / n, g))
}

/// Symmetric `C×C` matrix of channel inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    size: usize,
    data: Vec<f64>,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn gram_of(f: &[f64], c: usize, m: usize) -> Vec<f64> {
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        let fi = &f[i * m..(i + 1) * m];
        for j in i..c {
            let fj = &f[j * m..(j + 1) * m];
            let v: f64 = fi.iter().zip(fj).map(|(a, b)| a * b).sum();
            g[i * c + j] = v;
            g[j * c + i] = v;
        }
    }
    g
}

/// Gram matrix of one feature map, `C×H×W` or `1×C×H×W`.
pub fn gram(features: &Tensor) -> Result<GramMatrix> {
    let s = features.shape();
    let (c, m) = match s.len() {
        3 => (s[0], s[1] * s[2]),
        4 if s[0] == 1 => (s[1], s[2] * s[3]),
        _ => bail!(ShapeMismatch, "gram: expected C×H×W, got {s:?}"),
    };
    if c == 0 {
        bail!(ShapeMismatch, "gram: zero channels");
    }
    Ok(GramMatrix {
        size: c,
        data: gram_of(features.data(), c, m),
    })
}

fn block_weight(weights: &LossWeights, key: FeatureKey) -> f64 {
    weights.block_weights[key.0 - 1]
}

/// Batch-mean of `Σ_keys ϖ_γ/(H·W)·‖G(style) − G(gen)‖²_F`. A style set with
/// batch 1 is compared against every generated image.
pub fn style_loss(feats_style: &FeatureSet, feats_gen: &FeatureSet, weights: &LossWeights) -> Result<f64> {
    Ok(style_loss_grad(feats_style, feats_gen, weights)?.0)
}

/// Value and gradient with respect to the generated features, keyed like
/// `feats_style`.
pub fn style_loss_grad(
    feats_style: &FeatureSet,
    feats_gen: &FeatureSet,
    weights: &LossWeights,
) -> Result<(f64, FeatureSet)> {
    let mut total = 0.0;
    let mut n_batch = 1;
    let mut grads = BTreeMap::new();
    for (&key, fs) in &feats_style.entries {
        let Some(fg) = feats_gen.entries.get(&key) else {
            bail!(StructureMismatch, "style: generated features lack {key:?}");
        };
        let (ns, cs, _, _) = fs.expect_rank4("style features")?;
        let (n, c, h, w) = fg.expect_rank4("generated features")?;
        if cs != c || (ns != 1 && ns != n) {
            bail!(StructureMismatch, "style {key:?}: {:?} vs {:?}", fs.shape(), fg.shape());
        }
        n_batch = n;
        let m = h * w;
        let scale = block_weight(weights, key) / m as f64;
        let mut g = Tensor::zeros(fg.shape());
        for b in 0..n {
            let sb = if ns == 1 { 0 } else { b };
            let f_s = &fs.data()[sb * c * m..(sb + 1) * c * m];
            let f_g = &fg.data()[b * c * m..(b + 1) * c * m];
            let gs = gram_of(f_s, c, m);
            let gg = gram_of(f_g, c, m);
            let diff: Vec<f64> = gg.iter().zip(&gs).map(|(a, b)| a - b).collect();
            total += scale * diff.iter().map(|d| d * d).sum::<f64>();
            // d/dF ‖F Fᵀ − S‖² = 4 (F Fᵀ − S) F for symmetric S.
            let gb = &mut g.data_mut()[b * c * m..(b + 1) * c * m];
            for i in 0..c {
                let row = &mut gb[i * m..(i + 1) * m];
                for j in 0..c {
                    let coeff = 4.0 * scale * diff[i * c + j] / n as f64;
                    if coeff != 0.0 {
                        for (r, &v) in row.iter_mut().zip(&f_g[j * m..(j + 1) * m]) {
                            *r += coeff * v;
                        }
                    }
                }
            }
        }
        grads.insert(key, g);
    }
    Ok((
        total / n_batch as f64,
        FeatureSet {
            source: feats_gen.source,
            entries: grads,
        },
    ))
}

/// Batch-mean of `Σ_keys 1/(H·W)·‖φ(x) − φ(x̂)‖²_F` over the keys of
/// `feats_x`.
pub fn content_loss(feats_x: &FeatureSet, feats_gen: &FeatureSet) -> Result<f64> {
    Ok(content_loss_grad(feats_x, feats_gen)?.0)
}

pub fn content_loss_grad(feats_x: &FeatureSet, feats_gen: &FeatureSet) -> Result<(f64, FeatureSet)> {
    let mut total = 0.0;
    let mut n_batch = 1;
    let mut grads = BTreeMap::new();
    for (&key, fx) in &feats_x.entries {
        let Some(fg) = feats_gen.entries.get(&key) else {
            bail!(StructureMismatch, "content: generated features lack {key:?}");
        };
        if fx.shape() != fg.shape() {
            bail!(StructureMismatch, "content {key:?}: {:?} vs {:?}", fx.shape(), fg.shape());
        }
        let (n, _, h, w) = fg.expect_rank4("generated features")?;
        n_batch = n;
        let m = (h * w) as f64;
        let mut g = Tensor::zeros(fg.shape());
        for ((gv, &a), &b) in g.data_mut().iter_mut().zip(fx.data()).zip(fg.data()) {
            let d = b - a;
            total += d * d / m;
            *gv = 2.0 * d / (m * n as f64);
        }
        grads.insert(key, g);
    }
    Ok((
        total / n_batch as f64,
        FeatureSet {
            source: feats_gen.source,
            entries: grads,
        },
    ))
}

/// Batch-mean of the per-image sum of squared vertical and horizontal
/// neighbour differences over all channels.
pub fn tv_loss(x_hat: &Tensor) -> Result<f64> {
    Ok(tv_loss_grad(x_hat)?.0)
}

pub fn tv_loss_grad(x_hat: &Tensor) -> Result<(f64, Tensor)> {
    let (n, c, h, w) = x_hat.expect_rank4("tv_loss input")?;
    let nf = n.max(1) as f64;
    let x = x_hat.data();
    let mut g = Tensor::zeros(x_hat.shape());
    let gd = g.data_mut();
    let mut sum = 0.0;
    for p in 0..n * c {
        let base = p * h * w;
        for i in 0..h {
            for j in 0..w {
                let at = base + i * w + j;
                if i + 1 < h {
                    let d = x[at + w] - x[at];
                    sum += d * d;
                    gd[at + w] += 2.0 * d / nf;
                    gd[at] -= 2.0 * d / nf;
                }
                if j + 1 < w {
                    let d = x[at + 1] - x[at];
                    sum += d * d;
                    gd[at + 1] += 2.0 * d / nf;
                    gd[at] -= 2.0 * d / nf;
                }
            }
        }
    }
    Ok((sum / nf, g))
}

/// `ω_cont·content + ω_sty·style + ω_tv·tv`.
pub fn style_transfer_loss(
    feats_x: &FeatureSet,
    feats_style: &FeatureSet,
    feats_gen: &FeatureSet,
    x_hat: &Tensor,
    weights: &LossWeights,
) -> Result<f64> {
    Ok(style_transfer_loss_grad(feats_x, feats_style, feats_gen, x_hat, weights)?.value)
}

#[derive(Debug, Clone)]
pub struct StyleTransferGrad {
    pub value: f64,
    pub content: f64,
    pub style: f64,
    pub tv: f64,
    /// Weighted gradient with respect to the generated features.
    pub feats: FeatureSet,
    /// Weighted TV gradient with respect to `x_hat`.
    pub image: Tensor,
}

pub fn style_transfer_loss_grad(
    feats_x: &FeatureSet,
    feats_style: &FeatureSet,
    feats_gen: &FeatureSet,
    x_hat: &Tensor,
    weights: &LossWeights,
) -> Result<StyleTransferGrad> {
    let (content, gc) = content_loss_grad(feats_x, feats_gen)?;
    let (style, gs) = style_loss_grad(feats_style, feats_gen, weights)?;
    let (tv, mut gt) = tv_loss_grad(x_hat)?;
    let mut feats = FeatureSet {
        source: feats_gen.source,
        entries: BTreeMap::new(),
    };
    for (set, w) in [(gc, weights.omega_cont), (gs, weights.omega_sty)] {
        for (k, mut t) in set.entries {
            t.scale(w);
            match feats.entries.get_mut(&k) {
                Some(acc) => acc.add_assign(&t),
                None => {
                    feats.entries.insert(k, t);
                }
            }
        }
    }
    gt.scale(weights.omega_tv);
    Ok(StyleTransferGrad {
        value: weights.omega_cont * content + weights.omega_sty * style + weights.omega_tv * tv,
        content,
        style,
        tv,
        feats,
        image: gt,
    })
}

/// Already-evaluated objective terms. Which optional parts are present must
/// agree with the mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub adversarial: f64,
    pub deviation: Option<f64>,
    pub segmentation: Option<f64>,
    pub style_transfer: Option<f64>,
}

/// Combined generator loss for `mode`:
/// `synthesis_l1` → adv + λ_dev·L1, `segmentation` → adv + λ_seg·BCE,
/// `synthesis_style` → adv + λ_seg·L_SEG (if present) + L_ST.
pub fn generator_objective(mode: Mode, parts: &ObjectiveParts, weights: &LossWeights) -> Result<f64> {
    let p = parts;
    match mode {
        Mode::SynthesisL1 => match (p.deviation, p.segmentation, p.style_transfer) {
            (Some(l1), None, None) => Ok(p.adversarial + weights.lambda_dev * l1),
            _ => bail!(Mode, "synthesis_l1 takes exactly the adversarial and L1 terms"),
        },
        Mode::Segmentation => match (p.deviation, p.segmentation, p.style_transfer) {
            (None, Some(bce), None) => Ok(p.adversarial + weights.lambda_seg * bce),
            _ => bail!(Mode, "segmentation takes exactly the adversarial and BCE terms"),
        },
        Mode::SynthesisStyle => match (p.deviation, p.style_transfer) {
            (None, Some(st)) => Ok(p.adversarial + weights.lambda_seg * p.segmentation.unwrap_or(0.0) + st),
            _ => bail!(Mode, "synthesis_style needs the style-transfer term and no L1 term"),
        },
    }
}
