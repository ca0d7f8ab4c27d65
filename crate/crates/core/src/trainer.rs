//! Adversarial training: alternating generator and discriminator updates,
//! validation-based model selection and image generation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{fov_batch, image_batch, mask_batch, zscore_batch, DatasetSplit, Mask, PreprocessedSample};
use crate::error::{bail, Error, Result};
use crate::features::{extract_keys, extract_traced, Extractor, ExtractorConfig, ExtractorKind};
use crate::losses::{
    discriminator_loss_grad, generator_adv_loss_grad, generator_objective, l1_deviation_grad, seg_bce_grad,
    style_transfer_loss_grad, LossWeights, Mode, ObjectiveParts,
};
use crate::networks::{
    build_network, discriminator_forward, generator_forward, segmentor_forward, NetworkSpec, NetworkState,
    NoiseCode, Role, NOISE_DIM,
};
use crate::ops::Phase;
use crate::optim::{Adam, AdamConfig};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss: LossWeights,
    pub g_updates_per_d: usize,
    pub noise_sigma_train: f64,
    pub noise_sigma_eval: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement; 0
    /// never stops early.
    pub patience: usize,
    pub seed: u64,
    pub input_size: usize,
    pub g_base_filters: usize,
    pub d_base_filters: usize,
    pub extractor: ExtractorKind,
    pub features: ExtractorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::SynthesisL1,
            lr: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            loss: LossWeights::default(),
            g_updates_per_d: 2,
            noise_sigma_train: 0.001,
            noise_sigma_eval: 1.0,
            batch_size: 1,
            epochs: 500,
            patience: 20,
            seed: 0,
            input_size: 512,
            g_base_filters: 64,
            d_base_filters: 32,
            extractor: ExtractorKind::Vgg19,
            features: ExtractorConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small settings for 64×64 experiments on a CPU.
    pub fn desk(mode: Mode) -> Self {
        TrainConfig {
            mode,
            batch_size: 8,
            epochs: 30,
            input_size: 64,
            g_base_filters: 16,
            d_base_filters: 8,
            extractor: ExtractorKind::Standin,
            ..Default::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn generator_spec(&self) -> NetworkSpec {
        let role = match self.mode {
            Mode::Segmentation => Role::Segmentor,
            _ => Role::Synthesis,
        };
        NetworkSpec::new(role, self.input_size).with_base_filters(self.g_base_filters)
    }

    pub fn discriminator_spec(&self) -> NetworkSpec {
        NetworkSpec::new(Role::Discriminator, self.input_size).with_base_filters(self.d_base_filters)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            bail!(Config, "lr must be positive, got {}", self.lr);
        }
        self.adam().validate()?;
        self.loss.validate()?;
        if self.g_updates_per_d < 1 {
            bail!(Config, "g_updates_per_d must be at least 1");
        }
        if !(self.noise_sigma_train > 0.0) || !(self.noise_sigma_eval > 0.0) {
            bail!(Config, "noise sigmas must be positive");
        }
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be positive");
        }
        self.generator_spec().validate()?;
        self.discriminator_spec().validate()?;
        Ok(())
    }
}

/// `n` codes with i.i.d. `N(0, σ²)` entries drawn from `rng`.
pub fn sample_noise(n: usize, sigma: f64, rng: &mut Rng) -> Result<Vec<NoiseCode>> {
    if !(sigma > 0.0) {
        bail!(Config, "noise sigma must be positive, got {sigma}");
    }
    (0..n)
        .map(|_| NoiseCode::new((0..NOISE_DIM).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Combined generator objective of the last generator update.
    pub g_loss: f64,
    pub g_adv: f64,
    pub g_dev: Option<f64>,
    pub g_seg: Option<f64>,
    pub g_style: Option<f64>,
    pub d_loss: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    pub g_version: u64,
    pub d_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub val_loss: f64,
    pub mean_g_loss: f64,
    pub mean_d_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub selected_step: Option<u64>,
    pub selected_epoch: Option<usize>,
}

/// Persistent tensors of one network with the spec that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSnapshot {
    pub spec: NetworkSpec,
    pub version: u64,
    pub tensors: Vec<(String, Tensor)>,
}

impl NetworkSnapshot {
    pub fn of(state: &NetworkState) -> Self {
        NetworkSnapshot {
            spec: state.spec().clone(),
            version: state.version(),
            tensors: state.named_tensors(),
        }
    }

    pub fn restore(&self) -> Result<NetworkState> {
        let mut state = build_network(&self.spec, 0)?;
        state.load_tensors(&self.tensors)?;
        state.set_version(self.version);
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    /// `None` before the first epoch completes.
    pub epoch: Option<usize>,
    pub val_loss: Option<f64>,
    pub generator: NetworkSnapshot,
    pub discriminator: NetworkSnapshot,
}

impl Checkpoint {
    pub fn mode(&self) -> Mode {
        self.config.mode
    }
}

/// Per-pixel standardisation of each image channel over its FOV, with the
/// statistics kept for the backward pass. Pixels outside the FOV map to 0.
struct FovStandardize {
    z: Tensor,
    inv_std: Vec<f64>,
    fov: Tensor,
}

impl FovStandardize {
    fn forward(x: &Tensor, fov: &Tensor) -> Self {
        let (n, c, h, w) = x.dims4();
        let m = h * w;
        let mut z = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0; n * c];
        for b in 0..n {
            let f = &fov.data()[b * m..(b + 1) * m];
            let count = f.iter().sum::<f64>().max(1.0);
            for ch in 0..c {
                let off = (b * c + ch) * m;
                let xs = &x.data()[off..off + m];
                let mean = xs.iter().zip(f).map(|(v, k)| v * k).sum::<f64>() / count;
                let var = xs.iter().zip(f).map(|(v, k)| k * (v - mean) * (v - mean)).sum::<f64>() / count;
                let is = 1.0 / libm::sqrt(var + 1e-8);
                inv_std[b * c + ch] = is;
                for i in 0..m {
                    z.data_mut()[off + i] = f[i] * (xs[i] - mean) * is;
                }
            }
        }
        FovStandardize { z, inv_std, fov: fov.clone() }
    }

    fn backward(&self, g: &Tensor) -> Tensor {
        let (n, c, h, w) = g.dims4();
        let m = h * w;
        let mut out = Tensor::zeros(g.shape());
        for b in 0..n {
            let f = &self.fov.data()[b * m..(b + 1) * m];
            let count = f.iter().sum::<f64>().max(1.0);
            for ch in 0..c {
                let off = (b * c + ch) * m;
                let gs = &g.data()[off..off + m];
                let zs = &self.z.data()[off..off + m];
                let mean_g = gs.iter().zip(f).map(|(a, k)| a * k).sum::<f64>() / count;
                let mean_gz = gs.iter().zip(zs).map(|(a, z)| a * z).sum::<f64>() / count;
                let is = self.inv_std[b * c + ch];
                for i in 0..m {
                    out.data_mut()[off + i] = f[i] * is * (gs[i] - mean_g - zs[i] * mean_gz);
                }
            }
        }
        out
    }
}

fn encode_mask(y: &Tensor) -> Tensor {
    y.map(|v| 2.0 * v - 1.0)
}

fn column(values: &Tensor) -> Vec<f64> {
    values.data().to_vec()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Tensors for one batch in the layouts the networks consume.
struct Batch {
    image: Tensor,
    zscore: Tensor,
    mask: Tensor,
    fov: Tensor,
}

impl Batch {
    fn of(samples: &[&PreprocessedSample]) -> Result<Self> {
        Ok(Batch {
            image: image_batch(samples)?,
            zscore: zscore_batch(samples)?,
            mask: mask_batch(samples)?,
            fov: fov_batch(samples)?,
        })
    }

    fn len(&self) -> usize {
        self.image.shape()[0]
    }
}

/// Result of one generator forward and its loss terms.
struct GeneratorPass {
    parts: ObjectiveParts,
    objective: f64,
}

/// Training state: both networks, their optimizers and the auxiliary
/// frozen models used by the style objective.
pub struct Trainer {
    config: TrainConfig,
    generator: NetworkState,
    discriminator: NetworkState,
    g_opt: Adam,
    d_opt: Adam,
    extractor: Option<Extractor>,
    style_pool: Vec<Tensor>,
    style_cursor: usize,
    guide: Option<NetworkState>,
    noise_rng: Rng,
    step: u64,
}

impl Trainer {
    /// Fresh networks initialised from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = build_network(&config.generator_spec(), config.seed)?;
        let discriminator = build_network(&config.discriminator_spec(), config.seed)?;
        Ok(Trainer {
            g_opt: Adam::new(config.adam()),
            d_opt: Adam::new(config.adam()),
            noise_rng: rng::stream(config.seed, "noise"),
            config,
            generator,
            discriminator,
            extractor: None,
            style_pool: Vec::new(),
            style_cursor: 0,
            guide: None,
            step: 0,
        })
    }

    /// Resumes from a checkpoint; optimizer moments restart from zero.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(ckpt.config.clone())?;
        t.generator = ckpt.generator.restore()?;
        t.discriminator = ckpt.discriminator.restore()?;
        t.step = ckpt.step;
        Ok(t)
    }

    /// Frozen feature extractor for the style objective.
    pub fn with_extractor(mut self, extractor: Extractor) -> Result<Self> {
        self.config.features.validate(&extractor)?;
        self.extractor = Some(extractor);
        Ok(self)
    }

    /// Style images `1×3×S×S` in `[-1, 1]`, cycled in order.
    pub fn with_style_pool(mut self, pool: Vec<Tensor>) -> Self {
        self.style_pool = pool;
        self
    }

    /// Frozen segmentor whose BCE on generated images forms the optional
    /// segmentation term of the style objective.
    pub fn with_guide(mut self, segmentor: NetworkState) -> Result<Self> {
        if segmentor.role() != Role::Segmentor {
            bail!(Mode, "guide network must be a segmentor");
        }
        self.guide = Some(segmentor);
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &NetworkState {
        &self.generator
    }

    pub fn discriminator(&self) -> &NetworkState {
        &self.discriminator
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self, epoch: Option<usize>, val_loss: Option<f64>) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            epoch,
            val_loss,
            generator: NetworkSnapshot::of(&self.generator),
            discriminator: NetworkSnapshot::of(&self.discriminator),
        }
    }

    fn next_style(&mut self, fallback: &Tensor) -> Tensor {
        if self.style_pool.is_empty() {
            return fallback.batch_item(0);
        }
        let s = self.style_pool[self.style_cursor % self.style_pool.len()].clone();
        self.style_cursor += 1;
        s
    }

    /// Generator forward, loss terms and, when `grad` is set, backward into
    /// the generator's parameter gradients. `phase` applies to every network.
    fn generator_pass(&mut self, batch: &Batch, z: &[NoiseCode], style: Option<&Tensor>, phase: Phase, grad: bool) -> Result<GeneratorPass> {
        let cfg = self.config.clone();
        let w = &cfg.loss;
        let mut parts = ObjectiveParts::default();
        let n = batch.len();
        match cfg.mode {
            Mode::Segmentation => {
                let y_hat = segmentor_forward(&mut self.generator, &batch.zscore, phase)?;
                let d = discriminator_forward(&mut self.discriminator, &batch.image, &encode_mask(&y_hat), phase)?;
                let (adv, g_adv) = generator_adv_loss_grad(d.data())?;
                let (bce, g_bce) = seg_bce_grad(&batch.mask, &y_hat)?;
                parts.adversarial = adv;
                parts.segmentation = Some(bce);
                if grad {
                    let gin = self.discriminator.backward(&Tensor::from_vec(&[n, 1], g_adv)?)?;
                    let (_, g_mask) = gin.split_channels(3);
                    let mut g = g_mask;
                    g.scale(2.0);
                    g.axpy(w.lambda_seg, &g_bce);
                    self.generator.backward(&g)?;
                }
            }
            Mode::SynthesisL1 | Mode::SynthesisStyle => {
                let y = encode_mask(&batch.mask);
                let x_hat = generator_forward(&mut self.generator, &y, z, phase)?;
                let d = discriminator_forward(&mut self.discriminator, &x_hat, &y, phase)?;
                let (adv, g_adv) = generator_adv_loss_grad(d.data())?;
                parts.adversarial = adv;
                let mut g_img = if grad {
                    let gin = self.discriminator.backward(&Tensor::from_vec(&[n, 1], g_adv)?)?;
                    Some(gin.split_channels(3).0)
                } else {
                    None
                };
                if cfg.mode == Mode::SynthesisL1 {
                    let (l1, g_l1) = l1_deviation_grad(&batch.image, &x_hat)?;
                    parts.deviation = Some(l1);
                    if let Some(g) = g_img.as_mut() {
                        g.axpy(w.lambda_dev, &g_l1);
                    }
                } else {
                    let Some(ext) = self.extractor.as_ref() else {
                        bail!(Config, "synthesis_style needs a feature extractor");
                    };
                    let style = style.expect("style image supplied in style mode");
                    let fx = extract_keys(ext, &batch.image, &cfg.features.content_keys())?;
                    let fs = extract_keys(ext, style, &cfg.features.style_keys())?;
                    let (fg, trace) = extract_traced(ext, &x_hat, &cfg.features.all_keys())?;
                    let st = style_transfer_loss_grad(&fx, &fs, &fg, &x_hat, w)?;
                    parts.style_transfer = Some(st.value);
                    if let Some(g) = g_img.as_mut() {
                        g.add_assign(&trace.backward(ext, &st.feats)?);
                        g.add_assign(&st.image);
                    }
                    if let Some(guide) = self.guide.as_mut() {
                        let norm = FovStandardize::forward(&x_hat, &batch.fov);
                        let guide_phase = if grad { Phase::Eval } else { Phase::Inference };
                        let y_hat = segmentor_forward(guide, &norm.z, guide_phase)?;
                        let (bce, g_bce) = seg_bce_grad(&batch.mask, &y_hat)?;
                        parts.segmentation = Some(bce);
                        if let Some(g) = g_img.as_mut() {
                            let g_z = guide.backward(&g_bce)?;
                            guide.zero_grad();
                            g.axpy(w.lambda_seg, &norm.backward(&g_z));
                        }
                    }
                }
                if let Some(g) = g_img {
                    self.generator.backward(&g)?;
                }
            }
        }
        let objective = generator_objective(cfg.mode, &parts, w)?;
        Ok(GeneratorPass { parts, objective })
    }

    fn non_finite(&self, what: &str, detail: String) -> Error {
        Error::NonFiniteLoss(format!(
            "{what} at step {} (generator version {}, discriminator version {}): {detail}",
            self.step,
            self.generator.version(),
            self.discriminator.version()
        ))
    }

    /// `g_updates_per_d` generator updates followed by one discriminator
    /// update on `samples`.
    pub fn train_step(&mut self, samples: &[&PreprocessedSample]) -> Result<StepRecord> {
        let batch = Batch::of(samples)?;
        let n = batch.len();
        let sigma = self.config.noise_sigma_train;
        let style = if self.config.mode == Mode::SynthesisStyle {
            Some(self.next_style(&batch.image))
        } else {
            None
        };
        let mut last = None;
        for _ in 0..self.config.g_updates_per_d {
            self.generator.zero_grad();
            self.discriminator.zero_grad();
            let z = sample_noise(n, sigma, &mut self.noise_rng)?;
            let pass = self.generator_pass(&batch, &z, style.as_ref(), Phase::Train, true)?;
            if !pass.objective.is_finite() {
                return Err(self.non_finite("generator objective", format!("{:?}", pass.parts)));
            }
            self.g_opt.step(&mut self.generator);
            last = Some(pass);
        }
        let last = last.expect("at least one generator update");

        // Discriminator: real pairs, then fresh fakes from the updated generator.
        self.discriminator.zero_grad();
        let (real_mask, fake_image, fake_mask) = match self.config.mode {
            Mode::Segmentation => {
                let y_hat = segmentor_forward(&mut self.generator, &batch.zscore, Phase::Train)?;
                (encode_mask(&batch.mask), batch.image.clone(), encode_mask(&y_hat))
            }
            _ => {
                let y = encode_mask(&batch.mask);
                let z = sample_noise(n, sigma, &mut self.noise_rng)?;
                let x_hat = generator_forward(&mut self.generator, &y, &z, Phase::Train)?;
                (y.clone(), x_hat, y)
            }
        };
        let d_real = column(&discriminator_forward(&mut self.discriminator, &batch.image, &real_mask, Phase::Train)?);
        // The real half of the discriminator gradient is −1/(N·D(x)), the same
        // as the non-saturating generator term.
        let (_, g_real) = generator_adv_loss_grad(&d_real)?;
        self.discriminator.backward(&Tensor::from_vec(&[n, 1], g_real)?)?;
        let d_fake = column(&discriminator_forward(&mut self.discriminator, &fake_image, &fake_mask, Phase::Train)?);
        let (d_loss, _, g_fake) = discriminator_loss_grad(&d_real, &d_fake)?;
        if !d_loss.is_finite() {
            return Err(self.non_finite("discriminator loss", format!("D(x)={d_real:?} D(G)={d_fake:?}")));
        }
        self.discriminator.backward(&Tensor::from_vec(&[n, 1], g_fake)?)?;
        self.d_opt.step(&mut self.discriminator);
        self.generator.zero_grad();
        self.step += 1;

        Ok(StepRecord {
            step: self.step,
            g_loss: last.objective,
            g_adv: last.parts.adversarial,
            g_dev: last.parts.deviation,
            g_seg: last.parts.segmentation,
            g_style: last.parts.style_transfer,
            d_loss,
            d_real_mean: mean(&d_real),
            d_fake_mean: mean(&d_fake),
            g_version: self.generator.version(),
            d_version: self.discriminator.version(),
        })
    }

    /// Mean generator objective over `samples` with running BN statistics
    /// and training-σ noise from a fixed stream, so epochs are comparable.
    pub fn validation_loss(&mut self, samples: &[PreprocessedSample]) -> Result<f64> {
        if samples.is_empty() {
            bail!(InsufficientData, "empty validation set");
        }
        let mut noise = rng::stream(self.config.seed, "validation");
        let style = self.style_pool.first().cloned();
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in samples.chunks(self.config.batch_size) {
            let refs: Vec<&PreprocessedSample> = chunk.iter().collect();
            let batch = Batch::of(&refs)?;
            let z = sample_noise(batch.len(), self.config.noise_sigma_train, &mut noise)?;
            let style = style.clone().unwrap_or_else(|| batch.image.batch_item(0));
            let pass = self.generator_pass(&batch, &z, Some(&style), Phase::Inference, false)?;
            total += pass.objective * batch.len() as f64;
            count += batch.len();
        }
        let v = total / count as f64;
        if !v.is_finite() {
            return Err(self.non_finite("validation loss", format!("{v}")));
        }
        Ok(v)
    }
}

/// Runs up to `config.epochs` epochs and returns the checkpoint with the
/// lowest validation loss. `on_epoch` sees every epoch's record and
/// checkpoint as soon as it exists.
pub fn train(
    trainer: &mut Trainer,
    split: &DatasetSplit,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Checkpoint) -> Result<()>,
) -> Result<(Checkpoint, TrainLog)> {
    let mut log = TrainLog::default();
    let mut best = trainer.checkpoint(None, None);
    if trainer.config.epochs == 0 {
        return Ok((best, log));
    }
    if split.train.is_empty() || split.val.is_empty() {
        bail!(InsufficientData, "training needs nonempty train and validation sets");
    }
    let mut order_rng = rng::stream(trainer.config.seed, "shuffle");
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut best_val = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..trainer.config.epochs {
        order.shuffle(&mut order_rng);
        let first_step = log.steps.len();
        for chunk in order.chunks(trainer.config.batch_size) {
            let refs: Vec<&PreprocessedSample> = chunk.iter().map(|&i| &split.train[i]).collect();
            log.steps.push(trainer.train_step(&refs)?);
        }
        let recent = &log.steps[first_step..];
        let val_loss = trainer.validation_loss(&split.val)?;
        let record = EpochRecord {
            epoch,
            step: trainer.step,
            val_loss,
            mean_g_loss: mean(&recent.iter().map(|s| s.g_loss).collect::<Vec<_>>()),
            mean_d_loss: mean(&recent.iter().map(|s| s.d_loss).collect::<Vec<_>>()),
        };
        let ckpt = trainer.checkpoint(Some(epoch), Some(val_loss));
        on_epoch(&record, &ckpt)?;
        log.epochs.push(record);
        if val_loss < best_val {
            best_val = val_loss;
            best = ckpt;
            stale = 0;
        } else {
            stale += 1;
        }
        if trainer.config.patience > 0 && stale >= trainer.config.patience {
            break;
        }
    }
    log.selected_step = Some(best.step);
    log.selected_epoch = best.epoch;
    Ok((best, log))
}

/// `n_per_mask` images per mask with fresh codes at `sigma`. Image `k` of
/// mask `m` uses the noise stream indexed `m·n_per_mask + k`.
pub fn generate(ckpt: &Checkpoint, masks: &[Mask], n_per_mask: usize, sigma: f64, seed: u64) -> Result<Vec<Vec<Tensor>>> {
    let mut g = ckpt.generator.restore()?;
    if g.role() != Role::Synthesis {
        bail!(Mode, "generation needs a synthesis checkpoint, got {}", g.role().name());
    }
    let mut out = Vec::with_capacity(masks.len());
    for (m, mask) in masks.iter().enumerate() {
        let y = Tensor::from_vec(&[1, 1, mask.height, mask.width], mask.to_f64())?;
        let mut images = Vec::with_capacity(n_per_mask);
        for k in 0..n_per_mask {
            let mut r = rng::indexed_stream(seed, "generate", (m * n_per_mask + k) as u64);
            let z = sample_noise(1, sigma, &mut r)?;
            images.push(generate_with_codes(&mut g, &y, &z)?);
        }
        out.push(images);
    }
    Ok(out)
}

/// Deterministic synthesis for binary masks `N×1×S×S` and explicit codes.
pub fn generate_with_codes(generator: &mut NetworkState, masks: &Tensor, z: &[NoiseCode]) -> Result<Tensor> {
    generator_forward(generator, &encode_mask(masks), z, Phase::Inference)
}
