//! Command-line interface. Every command reads its settings as defaults,
//! then `--config`, then explicit flags, validates them, and only then
//! touches the filesystem.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use migan_core::data::{
    augment, make_synthetic_dataset, preprocess, restore_original, split_train_val, unscale, DatasetKind,
    FundusSample, Mask, PreprocessedSample,
};
use migan_core::eval::{evaluate_dataset, evaluate_predictions, otsu_threshold, segment, Prediction};
use migan_core::features::{Extractor, ExtractorKind};
use migan_core::losses::Mode;
use migan_core::networks::Role;
use migan_core::trainer::{generate, train, Trainer};
use migan_core::Tensor;

use crate::checkpoint::{load_checkpoint, load_generator, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::{
    export_dataset, load_dataset, load_samples, pairing_key, read_gray, read_mask, read_preprocessed, write_gray,
    write_image, write_json, write_mask, write_preprocessed,
};
use crate::error::{Error, Result};
use crate::logs::{write_report, write_train_log};
use crate::vgg::load_vgg_extractor;

#[derive(Debug, Parser)]
#[command(name = "migan", version, about = "Retinal image synthesis and vessel segmentation with adversarial networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resize, rescale and standardise a dataset into an array bundle.
    Preprocess(PreprocessArgs),
    /// Train a synthesis or segmentation model.
    Train(TrainArgs),
    /// Synthesise images for vessel masks, written as (mask, image) pairs.
    Generate(GenerateArgs),
    /// Write vessel probability maps and Otsu masks for a dataset.
    Segment(SegmentArgs),
    /// Score a segmentor or saved probability maps against gold masks.
    Evaluate(EvaluateArgs),
    /// Write a procedural dataset of fundus-like images and vessel masks.
    Synthdata(SynthdataArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Root seed; every random stream derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Network input side in pixels (power of two, at least 64).
    #[arg(long, default_value_t = 512)]
    pub input_size: usize,
}

fn kind_parser() -> impl TypedValueParser<Value = DatasetKind> {
    PossibleValuesParser::new(["drive", "stare", "synthetic"]).map(|s| DatasetKind::parse(&s).expect("listed value"))
}

fn mode_parser() -> impl TypedValueParser<Value = Mode> {
    PossibleValuesParser::new(["synthesis_l1", "synthesis_style", "segmentation"])
        .map(|s| Mode::parse(&s).expect("listed value"))
}

fn extractor_parser() -> impl TypedValueParser<Value = ExtractorKind> {
    PossibleValuesParser::new(["vgg19", "standin"]).map(|s| match s.as_str() {
        "vgg19" => ExtractorKind::Vgg19,
        _ => ExtractorKind::Standin,
    })
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset root with images/, masks/ and optional fov/.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, value_parser = kind_parser(), default_value = "drive")]
    pub kind: DatasetKind,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset root, or a directory written by `preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = kind_parser(), default_value = "drive")]
    pub kind: DatasetKind,
    /// Augment the training split with rotations and mirroring.
    #[arg(long)]
    pub augment: bool,
    #[arg(long, value_parser = mode_parser(), default_value = "synthesis_l1")]
    pub mode: Mode,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub adam_beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub adam_beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub adam_eps: f64,
    /// Weight of the L1 deviation term.
    #[arg(long, default_value_t = 10.0)]
    pub lambda_dev: f64,
    /// Weight of the segmentation cross-entropy term.
    #[arg(long, default_value_t = 10.0)]
    pub lambda_seg: f64,
    #[arg(long, default_value_t = 1.0)]
    pub omega_cont: f64,
    #[arg(long, default_value_t = 10.0)]
    pub omega_sty: f64,
    #[arg(long, default_value_t = 100.0)]
    pub omega_tv: f64,
    /// Style weight of blocks 1 to 5, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "W1,..,W5", default_value = "0.2,0.2,0.2,0.2,0.2")]
    pub block_weights: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    pub g_updates_per_d: usize,
    #[arg(long, default_value_t = 0.001)]
    pub noise_sigma_train: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sigma_eval: f64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 64)]
    pub g_base_filters: usize,
    #[arg(long, default_value_t = 32)]
    pub d_base_filters: usize,
    #[arg(long, value_parser = extractor_parser(), default_value = "vgg19")]
    pub extractor: ExtractorKind,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub style_blocks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4")]
    pub content_blocks: Vec<usize>,
    /// Tap inside each style block: 2k is conv k+1, 2k+1 its ReLU.
    #[arg(long, default_value_t = 1)]
    pub style_layer: usize,
    #[arg(long, default_value_t = 0)]
    pub content_layer: usize,
    /// VGG-19 weights container for the style objective.
    #[arg(long)]
    pub vgg_weights: Option<PathBuf>,
    /// Dataset root whose images serve as style targets.
    #[arg(long)]
    pub style_images: Option<PathBuf>,
    /// Segmentation checkpoint whose loss on generated images joins the
    /// style objective.
    #[arg(long)]
    pub guide: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of binary vessel mask images.
    #[arg(long)]
    pub masks: PathBuf,
    /// Images per mask.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// Noise standard deviation at generation time.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root; masks/ is optional.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = kind_parser(), default_value = "drive")]
    pub kind: DatasetKind,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Segmentation checkpoint to run.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of probability-map images in original geometry.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Dataset root with gold masks.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = kind_parser(), default_value = "drive")]
    pub kind: DatasetKind,
    /// Row label in the report table; defaults to the dataset kind.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthdataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of samples.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
}

fn from_cli(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Copies each listed flag into its config slot when it was given.
macro_rules! overlay {
    ($m:expr, $args:expr, { $($field:ident => $slot:expr),* $(,)? }) => {
        $( if from_cli($m, stringify!($field)) { $slot = $args.$field.clone(); } )*
    };
}

impl Common {
    fn resolve(&self, m: &ArgMatches) -> Result<RunConfig> {
        let mut cfg = RunConfig::load_or_default(self.config.as_deref())?;
        overlay!(m, self, { seed => cfg.train.seed, input_size => cfg.train.input_size });
        Ok(cfg)
    }
}

impl TrainArgs {
    pub fn resolve(&self, m: &ArgMatches) -> Result<RunConfig> {
        let mut cfg = self.common.resolve(m)?;
        let t = &mut cfg.train;
        overlay!(m, self, {
            mode => t.mode,
            lr => t.lr,
            adam_beta1 => t.adam_beta1,
            adam_beta2 => t.adam_beta2,
            adam_eps => t.adam_eps,
            lambda_dev => t.loss.lambda_dev,
            lambda_seg => t.loss.lambda_seg,
            omega_cont => t.loss.omega_cont,
            omega_sty => t.loss.omega_sty,
            omega_tv => t.loss.omega_tv,
            g_updates_per_d => t.g_updates_per_d,
            noise_sigma_train => t.noise_sigma_train,
            noise_sigma_eval => t.noise_sigma_eval,
            batch_size => t.batch_size,
            epochs => t.epochs,
            patience => t.patience,
            g_base_filters => t.g_base_filters,
            d_base_filters => t.d_base_filters,
            extractor => t.extractor,
            style_blocks => t.features.style_blocks,
            content_blocks => t.features.content_blocks,
            style_layer => t.features.style_layer,
            content_layer => t.features.content_layer,
            kind => cfg.data.kind,
        });
        if from_cli(m, "block_weights") {
            t.loss.block_weights = self.block_weights.as_slice().try_into().map_err(|_| {
                migan_core::Error::Config(format!("--block-weights needs 5 values, got {}", self.block_weights.len()))
            })?;
        }
        if self.augment {
            cfg.data.augment = true;
        }
        for (flag, slot) in [
            (&self.vgg_weights, &mut cfg.style.vgg_weights),
            (&self.style_images, &mut cfg.style.images),
            (&self.guide, &mut cfg.style.guide),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        cfg.validate()?;
        if cfg.train.mode == Mode::SynthesisStyle
            && cfg.train.extractor == ExtractorKind::Vgg19
            && cfg.style.vgg_weights.is_none()
        {
            return Err(migan_core::Error::Config(
                "synthesis_style with the vgg19 extractor needs --vgg-weights (or use --extractor standin)".into(),
            )
            .into());
        }
        if cfg.train.mode != Mode::SynthesisStyle && (cfg.style.images.is_some() || cfg.style.guide.is_some()) {
            log::warn!("style images and guide are ignored outside synthesis_style");
        }
        Ok(cfg)
    }
}

fn sub_matches<'a>(m: &'a ArgMatches) -> &'a ArgMatches {
    m.subcommand().expect("subcommand is required").1
}

fn check_size(cfg: &RunConfig) -> Result<()> {
    let s = cfg.train.input_size;
    if s < 64 || !s.is_power_of_two() {
        return Err(migan_core::Error::Config(format!("--input-size must be a power of two >= 64, got {s}")).into());
    }
    Ok(())
}

fn preprocess_all(samples: &[FundusSample], kind: DatasetKind, size: usize) -> Result<Vec<PreprocessedSample>> {
    Ok(samples.iter().map(|s| preprocess(s, kind, size)).collect::<migan_core::Result<_>>()?)
}

fn cmd_preprocess(a: &PreprocessArgs, m: &ArgMatches) -> Result<()> {
    let cfg = a.common.resolve(m)?;
    check_size(&cfg)?;
    let samples = load_dataset(&a.root, a.kind)?;
    let pre = preprocess_all(&samples, a.kind, cfg.train.input_size)?;
    write_preprocessed(&a.common.out, a.kind, &pre)?;
    println!("preprocessed {} {} samples at {} px into {}", pre.len(), a.kind.name(), cfg.train.input_size, a.common.out.display());
    Ok(())
}

fn load_training_samples(root: &Path, cfg: &RunConfig) -> Result<Vec<PreprocessedSample>> {
    let size = cfg.train.input_size;
    if root.join("preprocessed.marc").is_file() {
        let (manifest, samples) = read_preprocessed(root)?;
        if manifest.input_size != size {
            return Err(migan_core::Error::Config(format!(
                "{} was preprocessed at {} px but training uses {size}",
                root.display(),
                manifest.input_size
            ))
            .into());
        }
        return Ok(samples);
    }
    preprocess_all(&load_dataset(root, cfg.data.kind)?, cfg.data.kind, size)
}

fn cmd_train(a: &TrainArgs, m: &ArgMatches) -> Result<()> {
    let cfg = a.resolve(m)?;
    let out = &a.common.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    crate::archive::write_file(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    let t = &cfg.train;

    let mut split = split_train_val(load_training_samples(&a.data, &cfg)?, t.seed)?;
    if cfg.data.augment {
        split.train = split.train.iter().flat_map(|s| augment(s, &cfg.data.augmentation, t.seed)).collect();
    }
    log::info!("training {} on {} samples, validating on {}", t.mode.name(), split.train.len(), split.val.len());

    let mut trainer = Trainer::new(t.clone())?;
    if t.mode == Mode::SynthesisStyle {
        let extractor = match (&t.extractor, &cfg.style.vgg_weights) {
            (ExtractorKind::Vgg19, Some(p)) => load_vgg_extractor(p)?,
            (ExtractorKind::Vgg19, None) => unreachable!("checked while resolving"),
            (ExtractorKind::Standin, _) => Extractor::standin(t.seed),
        };
        trainer = trainer.with_extractor(extractor)?;
        if let Some(root) = &cfg.style.images {
            let styles = preprocess_all(&load_samples(root, cfg.data.kind, false)?, cfg.data.kind, t.input_size)?;
            let pool = styles
                .iter()
                .map(|s| migan_core::data::image_batch(&[s]))
                .collect::<migan_core::Result<Vec<Tensor>>>()?;
            trainer = trainer.with_style_pool(pool);
        }
        if let Some(p) = &cfg.style.guide {
            trainer = trainer.with_guide(load_generator(p)?)?;
        }
    }

    let ckpt_dir = out.join("checkpoints");
    let (best, log) = train(&mut trainer, &split, &mut |e, ckpt| {
        log::info!(
            "epoch {:>3} step {:>6} val {:.5} g {:.5} d {:.5}",
            e.epoch,
            e.step,
            e.val_loss,
            e.mean_g_loss,
            e.mean_d_loss
        );
        save_checkpoint(&ckpt_dir.join(format!("epoch_{:04}.ckpt", e.epoch)), ckpt)
            .map_err(|err| migan_core::Error::Config(format!("saving checkpoint: {err}")))
    })?;
    save_checkpoint(&out.join("best.ckpt"), &best)?;
    write_train_log(&out.join("train_log.jsonl"), &log)?;
    match best.epoch {
        Some(e) => println!("selected epoch {e} (step {}, validation loss {:.6})", best.step, best.val_loss.unwrap_or(f64::NAN)),
        None => println!("no epochs run; wrote the initial checkpoint"),
    }
    Ok(())
}

fn mask_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| pairing_key(&p).map(|(k, _)| (k, p)))
        .collect();
    out.sort();
    out.dedup_by(|a, b| a.0 == b.0);
    Ok(out)
}

fn cmd_generate(a: &GenerateArgs, m: &ArgMatches) -> Result<()> {
    let cfg = a.common.resolve(m)?;
    if !(a.sigma > 0.0) {
        return Err(migan_core::Error::Config(format!("--sigma must be positive, got {}", a.sigma)).into());
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let size = ckpt.generator.spec.input_size;
    let files = mask_files(&a.masks)?;
    if files.is_empty() {
        return Err(migan_core::Error::InsufficientData(format!("no masks in {}", a.masks.display())).into());
    }
    let mut masks = Vec::with_capacity(files.len());
    for (_, p) in &files {
        let mk = read_mask(p)?;
        let data = if (mk.height, mk.width) == (size, size) {
            mk.data
        } else {
            migan_core::data::resize::nearest(&mk.data, mk.height, mk.width, size, size)
        };
        masks.push(Mask::new(size, size, data)?);
    }
    let images = generate(&ckpt, &masks, a.n, a.sigma, cfg.train.seed)?;
    let mut pairs = Vec::new();
    for ((key, _), (mask, imgs)) in files.iter().zip(masks.iter().zip(&images)) {
        for (k, img) in imgs.iter().enumerate() {
            let id = format!("{key}_g{k:02}");
            let hwc = to_hwc(img);
            write_image(&a.common.out.join("images").join(format!("{id}.png")), &hwc)?;
            write_mask(&a.common.out.join("masks").join(format!("{id}.png")), mask)?;
            pairs.push(id);
        }
    }
    write_json(
        &a.common.out.join("manifest.json"),
        &serde_json::json!({
            "checkpoint": a.checkpoint.display().to_string(),
            "sigma": a.sigma,
            "seed": cfg.train.seed,
            "per_mask": a.n,
            "pairs": pairs,
        }),
    )?;
    println!("wrote {} image/mask pairs to {}", pairs.len(), a.common.out.display());
    Ok(())
}

/// `1×3×S×S` in `[-1, 1]` to an interleaved `[0, 255]` image.
fn to_hwc(t: &Tensor) -> migan_core::data::Image {
    let (_, _, h, w) = t.dims4();
    let p = h * w;
    let d = t.data();
    let data = (0..p).flat_map(|i| (0..3).map(move |c| unscale(d[c * p + i]))).collect();
    migan_core::data::Image { height: h, width: w, data }
}

fn load_segmentor(path: &Path) -> Result<migan_core::networks::NetworkState> {
    let seg = load_generator(path)?;
    if seg.role() != Role::Segmentor {
        return Err(migan_core::Error::Mode(format!("{} holds a {} network, not a segmentor", path.display(), seg.role().name())).into());
    }
    Ok(seg)
}

fn cmd_segment(a: &SegmentArgs, m: &ArgMatches) -> Result<()> {
    a.common.resolve(m)?;
    let mut seg = load_segmentor(&a.checkpoint)?;
    let size = seg.spec().input_size;
    let samples = load_samples(&a.data, a.kind, false)?;
    for s in &samples {
        let pre = preprocess(s, a.kind, size)?;
        let prob = restore_original(&segment(&mut seg, &pre)?, size, s, a.kind)?;
        let (h, w) = s.original_size;
        write_gray(&a.common.out.join("prob").join(format!("{}.png", s.id)), h, w, &prob)?;
        let (_, binary) = otsu_threshold(&prob, &s.fov.data)?;
        write_mask(&a.common.out.join("binary").join(format!("{}.png", s.id)), &Mask::new(h, w, binary)?)?;
    }
    println!("segmented {} images into {}", samples.len(), a.common.out.display());
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, m: &ArgMatches) -> Result<()> {
    a.common.resolve(m)?;
    let samples = load_dataset(&a.data, a.kind)?;
    let mut meta = BTreeMap::new();
    meta.insert("dataset".to_string(), a.data.display().to_string());
    meta.insert("kind".to_string(), a.kind.name().to_string());
    let report = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let mut seg = load_segmentor(ckpt)?;
            let size = seg.spec().input_size;
            let pairs = samples
                .into_iter()
                .map(|s| {
                    let p = preprocess(&s, a.kind, size)?;
                    Ok((s, p))
                })
                .collect::<migan_core::Result<Vec<_>>>()?;
            meta.insert("checkpoint".to_string(), ckpt.display().to_string());
            evaluate_dataset(&mut seg, &pairs, a.kind, meta)?
        }
        (None, Some(dir)) => {
            let files: BTreeMap<String, PathBuf> = mask_files(dir)?.into_iter().collect();
            let mut maps = Vec::with_capacity(samples.len());
            for s in &samples {
                let Some(p) = files.get(&s.id) else {
                    return Err(migan_core::Error::MissingPair(format!("no prediction for {}", s.id)).into());
                };
                let (h, w, v) = read_gray(p)?;
                if (h, w) != s.original_size {
                    return Err(migan_core::Error::ShapeMismatch(format!(
                        "{}: prediction {h}x{w}, image {:?}",
                        p.display(),
                        s.original_size
                    ))
                    .into());
                }
                maps.push(v);
            }
            let preds: Vec<Prediction> = samples
                .iter()
                .zip(&maps)
                .map(|(s, prob)| Prediction { id: &s.id, prob, gold: &s.mask.data, fov: &s.fov.data })
                .collect();
            meta.insert("predictions".to_string(), dir.display().to_string());
            evaluate_predictions(&preds, meta)?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let label = a.label.clone().unwrap_or_else(|| a.kind.name().to_string());
    write_report(&a.common.out, &label, &report)?;
    print!("{}", migan_core::eval::EvalReport::table(&[(&label, &report)]));
    Ok(())
}

fn cmd_synthdata(a: &SynthdataArgs, m: &ArgMatches) -> Result<()> {
    let cfg = a.common.resolve(m)?;
    let (seed, size) = (cfg.train.seed, cfg.train.input_size);
    let samples = make_synthetic_dataset(a.n, size, seed, &cfg.synthetic)?;
    let manifest = serde_json::json!({
        "kind": "synthetic",
        "seed": seed,
        "size": size,
        "n": a.n,
        "params": cfg.synthetic,
        "ids": samples.iter().map(|s| s.id.clone()).collect::<Vec<_>>(),
    });
    export_dataset(&a.common.out, &samples, &manifest)?;
    println!("wrote {} synthetic samples ({size} px, seed {seed}) to {}", a.n, a.common.out.display());
    Ok(())
}

/// Runs a command line. Returns the process exit status; clap handles
/// `--help`, `--version` and usage errors itself.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = Cli::from_arg_matches(&matches).expect("matches come from this parser");
    match execute(&cli, &matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, matches: &ArgMatches) -> Result<()> {
    let m = sub_matches(matches);
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(a, m),
        Command::Train(a) => cmd_train(a, m),
        Command::Generate(a) => cmd_generate(a, m),
        Command::Segment(a) => cmd_segment(a, m),
        Command::Evaluate(a) => cmd_evaluate(a, m),
        Command::Synthdata(a) => cmd_synthdata(a, m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use migan_core::trainer::TrainConfig;

    fn resolve_train(args: &[&str]) -> Result<RunConfig> {
        let mut full = vec!["migan", "train", "--out", "o", "--data", "d"];
        full.extend_from_slice(args);
        let matches = Cli::command().try_get_matches_from(full).unwrap();
        let Command::Train(a) = Cli::from_arg_matches(&matches).unwrap().command else { unreachable!() };
        a.resolve(sub_matches(&matches))
    }

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flag_defaults_equal_config_defaults() {
        let matches = Cli::command().try_get_matches_from(["migan", "train", "--out", "o", "--data", "d"]).unwrap();
        let Command::Train(a) = Cli::from_arg_matches(&matches).unwrap().command else { unreachable!() };
        let d = TrainConfig::default();
        assert_eq!(
            (a.mode, a.lr, a.adam_beta1, a.adam_beta2, a.adam_eps),
            (d.mode, d.lr, d.adam_beta1, d.adam_beta2, d.adam_eps)
        );
        assert_eq!(
            (a.lambda_dev, a.lambda_seg, a.omega_cont, a.omega_sty, a.omega_tv),
            (d.loss.lambda_dev, d.loss.lambda_seg, d.loss.omega_cont, d.loss.omega_sty, d.loss.omega_tv)
        );
        assert_eq!(a.block_weights, d.loss.block_weights.to_vec());
        assert_eq!(
            (a.g_updates_per_d, a.noise_sigma_train, a.noise_sigma_eval, a.batch_size, a.epochs, a.patience),
            (d.g_updates_per_d, d.noise_sigma_train, d.noise_sigma_eval, d.batch_size, d.epochs, d.patience)
        );
        assert_eq!(
            (a.common.seed, a.common.input_size, a.g_base_filters, a.d_base_filters, a.extractor),
            (d.seed, d.input_size, d.g_base_filters, d.d_base_filters, d.extractor)
        );
        assert_eq!(
            (a.style_blocks, a.content_blocks, a.style_layer, a.content_layer),
            (d.features.style_blocks.clone(), d.features.content_blocks.clone(), d.features.style_layer, d.features.content_layer)
        );
        assert_eq!(resolve_train(&[]).unwrap().train, d);
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\nepochs = 7\nbatch_size = 4\nseed = 9\n[train.loss]\nlambda_seg = 3.0\n").unwrap();
        let p = p.to_str().unwrap();
        let cfg = resolve_train(&["--config", p, "--epochs", "2", "--lambda-dev", "1.5"]).unwrap();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.loss.lambda_seg, 3.0);
        assert_eq!(cfg.train.loss.lambda_dev, 1.5);
        assert_eq!(cfg.train.lr, 2e-4);
        // A flag equal to the default still wins over the file.
        assert_eq!(resolve_train(&["--config", p, "--seed", "0"]).unwrap().train.seed, 0);
    }

    #[test]
    fn invalid_combinations_are_rejected_before_work() {
        let e = resolve_train(&["--mode", "synthesis_style"]).unwrap_err();
        assert!(e.to_string().contains("--vgg-weights"), "{e}");
        assert_eq!(e.exit_code(), 3);
        assert_eq!(resolve_train(&["--input-size", "100"]).unwrap_err().exit_code(), 3);
        assert_eq!(resolve_train(&["--lr=-1"]).unwrap_err().exit_code(), 3);
        assert!(resolve_train(&["--mode", "synthesis_style", "--extractor", "standin"]).is_ok());
    }
}
