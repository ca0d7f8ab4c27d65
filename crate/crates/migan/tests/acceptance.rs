//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.
//!
//! Criterion 7 uses a DRIVE copy at `$MIGAN_DRIVE_ROOT` (images/, masks/,
//! fov/) when set and a synthetic dataset otherwise.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use migan::checkpoint::{load_checkpoint, save_checkpoint};
use migan::dataset::load_dataset;
use migan::logs::train_log_jsonl;
use migan_core::data::{
    make_synthetic_dataset, preprocess, split_train_val, DatasetKind, FundusSample, PreprocessedSample,
    SyntheticParams,
};
use migan_core::eval::{auc_roc, evaluate_dataset, evaluate_predictions, otsu_threshold, Prediction, OTSU_BINS};
use migan_core::features::{extract, extract_traced, Extractor, ExtractorConfig, FeatureSet};
use migan_core::losses::{
    content_loss, content_loss_grad, discriminator_loss, discriminator_loss_grad, generator_adv_loss,
    generator_adv_loss_grad, gram, l1_deviation, l1_deviation_grad, seg_bce, seg_bce_grad, style_loss,
    style_loss_grad, style_transfer_loss, style_transfer_loss_grad, tv_loss, tv_loss_grad, LossWeights, Mode, EPS,
};
use migan_core::networks::{
    build_network, discriminator_forward, generator_forward, segmentor_forward, NetworkSpec, NoiseCode, Role,
};
use migan_core::ops::{Param, Phase};
use migan_core::optim::{Adam, AdamConfig};
use migan_core::rng::{self, Rng};
use migan_core::trainer::{generate_with_codes, sample_noise, train, Checkpoint, TrainConfig, Trainer};
use migan_core::Tensor;
use rand::Rng as _;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform(r: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::from_vec(shape, data).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Loss gradients against central differences

const FD_STEP: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
const INSTANCES: usize = 5;

/// Largest `|a − n| / max(|a|, |n|, floor)` over all coordinates, with
/// `floor = 1e-6 · max(1, max|n|)` so that exactly-zero gradients are
/// judged on an absolute scale tied to the loss's own gradients.
fn max_rel_error(f: &dyn Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    let mut numeric = Vec::with_capacity(x.len());
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + FD_STEP;
        let up = f(&p);
        p[i] = x[i] - FD_STEP;
        let down = f(&p);
        p[i] = x[i];
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    let scale = numeric.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale;
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Values whose pairwise differences stay clear of the L1 kink.
fn away_from(r: &mut Rng, other: &[f64]) -> Vec<f64> {
    other
        .iter()
        .map(|&o| loop {
            let v = r.random_range(-1.0..1.0);
            if (v - o).abs() > 10.0 * FD_STEP {
                break v;
            }
        })
        .collect()
}

fn feature_set(entries: Vec<((usize, usize), Tensor)>) -> FeatureSet {
    FeatureSet { source: migan_core::features::ExtractorKind::Standin, entries: entries.into_iter().collect() }
}

const FEATURE_SHAPES: [((usize, usize), [usize; 4]); 2] = [((1, 1), [1, 4, 8, 8]), ((2, 1), [1, 6, 8, 8])];

fn random_features(r: &mut Rng) -> FeatureSet {
    feature_set(
        FEATURE_SHAPES
            .iter()
            .map(|&(k, s)| (k, tensor(&s, uniform(r, s.iter().product(), -1.0, 1.0))))
            .collect(),
    )
}

fn flatten(fs: &FeatureSet) -> Vec<f64> {
    fs.entries.values().flat_map(|t| t.data().to_vec()).collect()
}

fn unflatten(like: &FeatureSet, v: &[f64]) -> FeatureSet {
    let mut at = 0;
    let mut out = like.clone();
    for t in out.entries.values_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&v[at..at + n]);
        at += n;
    }
    out
}

fn criterion_1() -> Outcome {
    let mut r = rng::stream(101, "acceptance-gradients");
    let w = LossWeights::default();
    let shape = [1, 3, 8, 8];
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |name: &'static str, e: f64| {
        let slot = worst.entry(name).or_insert(0.0);
        *slot = slot.max(e);
    };
    let ext = Extractor::standin(7);
    let feat_cfg = ExtractorConfig {
        style_blocks: vec![1, 2, 3, 4],
        content_blocks: vec![2],
        style_layer: 1,
        content_layer: 0,
    };
    for _ in 0..INSTANCES {
        let x = uniform(&mut r, 192, -1.0, 1.0);
        let xh = away_from(&mut r, &x);
        let xt = tensor(&shape, x.clone());
        let (_, g) = l1_deviation_grad(&xt, &tensor(&shape, xh.clone())).unwrap();
        record("l1_deviation", max_rel_error(&|v| l1_deviation(&xt, &tensor(&shape, v.to_vec())).unwrap(), &xh, g.data()));

        let d = uniform(&mut r, 64, 0.05, 0.95);
        let (_, g) = generator_adv_loss_grad(&d).unwrap();
        record("generator_adv_loss", max_rel_error(&|v| generator_adv_loss(v).unwrap(), &d, &g));

        let real = uniform(&mut r, 64, 0.05, 0.95);
        let fake = uniform(&mut r, 64, 0.05, 0.95);
        let (_, gr, gf) = discriminator_loss_grad(&real, &fake).unwrap();
        let e_real = max_rel_error(&|v| discriminator_loss(v, &fake).unwrap(), &real, &gr);
        let e_fake = max_rel_error(&|v| discriminator_loss(&real, v).unwrap(), &fake, &gf);
        record("discriminator_loss", e_real.max(e_fake));

        let y = tensor(&[1, 1, 8, 8], (0..64).map(|_| r.random_bool(0.3) as u8 as f64).collect());
        let p = uniform(&mut r, 64, 0.05, 0.95);
        let (_, g) = seg_bce_grad(&y, &tensor(&[1, 1, 8, 8], p.clone())).unwrap();
        record("seg_bce", max_rel_error(&|v| seg_bce(&y, &tensor(&[1, 1, 8, 8], v.to_vec())).unwrap(), &p, g.data()));

        let fs = random_features(&mut r);
        let fg = random_features(&mut r);
        let (_, g) = style_loss_grad(&fs, &fg, &w).unwrap();
        let v0 = flatten(&fg);
        record("style_loss", max_rel_error(&|v| style_loss(&fs, &unflatten(&fg, v), &w).unwrap(), &v0, &flatten(&g)));

        let fx = random_features(&mut r);
        let (_, g) = content_loss_grad(&fx, &fg).unwrap();
        record("content_loss", max_rel_error(&|v| content_loss(&fx, &unflatten(&fg, v)).unwrap(), &v0, &flatten(&g)));

        let (_, g) = tv_loss_grad(&tensor(&shape, xh.clone())).unwrap();
        record("tv_loss", max_rel_error(&|v| tv_loss(&tensor(&shape, v.to_vec())).unwrap(), &xh, g.data()));

        let content_img = tensor(&shape, x.clone());
        let style_img = tensor(&shape, uniform(&mut r, 192, -1.0, 1.0));
        let fxc = extract(&ext, &content_img, &feat_cfg).unwrap();
        let fsc = extract(&ext, &style_img, &feat_cfg).unwrap();
        let gen = tensor(&shape, uniform(&mut r, 192, -1.0, 1.0));
        let (fgen, trace) = extract_traced(&ext, &gen, &feat_cfg.all_keys()).unwrap();
        let st = style_transfer_loss_grad(&fxc, &fsc, &fgen, &gen, &w).unwrap();
        let mut analytic = trace.backward(&ext, &st.feats).unwrap();
        analytic.add_assign(&st.image);
        let f = |v: &[f64]| {
            let t = tensor(&shape, v.to_vec());
            let fg = extract(&ext, &t, &feat_cfg).unwrap();
            style_transfer_loss(&fxc, &fsc, &fg, &t, &w).unwrap()
        };
        record("style_transfer_loss", max_rel_error(&f, gen.data(), analytic.data()));
    }
    let bad: Vec<String> = worst.iter().filter(|(_, &e)| !(e < GRAD_TOL)).map(|(n, e)| format!("{n} {e:.2e}")).collect();
    let summary = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(bad.is_empty(), || format!("relative error >= {GRAD_TOL:e}: {}", bad.join(", ")))?;
    Ok(format!("{} losses x {INSTANCES} instances; worst: {summary}", worst.len()))
}

// ---------------------------------------------------------------------------
// 2. Loop oracles

fn oracle_gram(f: &[f64], c: usize, m: usize) -> Vec<f64> {
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let mut s = 0.0;
            for k in 0..m {
                s += f[i * m + k] * f[j * m + k];
            }
            g[i * c + j] = s;
        }
    }
    g
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn criterion_2() -> Outcome {
    let mut r = rng::stream(202, "acceptance-oracles");
    let tol = 1e-12;
    let w = LossWeights { block_weights: [0.1, 0.2, 0.3, 0.25, 0.15], ..LossWeights::default() };
    for trial in 0..10 {
        let (n, c, h, wd) = (2, 3, 5, 4);
        let len = n * c * h * wd;
        let x = uniform(&mut r, len, -1.0, 1.0);
        let xh = uniform(&mut r, len, -1.0, 1.0);
        let shape = [n, c, h, wd];

        let f1 = &x[..c * h * wd];
        let g = gram(&tensor(&[c, h, wd], f1.to_vec())).unwrap();
        let og = oracle_gram(f1, c, h * wd);
        ensure(g.as_slice().iter().zip(&og).all(|(a, b)| close(*a, *b, tol)), || format!("gram differs in trial {trial}"))?;

        let l1: f64 = x.iter().zip(&xh).map(|(a, b)| (a - b).abs()).sum::<f64>() / len as f64;
        let got = l1_deviation(&tensor(&shape, x.clone()), &tensor(&shape, xh.clone())).unwrap();
        ensure(close(got, l1, tol), || format!("l1 {got} vs {l1}"))?;

        let y: Vec<f64> = (0..len).map(|_| r.random_bool(0.4) as u8 as f64).collect();
        let mut p = uniform(&mut r, len, 0.0, 1.0);
        p[0] = 0.0;
        p[1] = 1.0;
        let mut bce = 0.0;
        for i in 0..len {
            let q = p[i].clamp(EPS, 1.0 - EPS);
            bce += -(y[i] * q.ln() + (1.0 - y[i]) * (1.0 - q).ln());
        }
        bce /= len as f64;
        let got = seg_bce(&tensor(&shape, y), &tensor(&shape, p)).unwrap();
        ensure(close(got, bce, tol), || format!("bce {got} vs {bce}"))?;

        let mut tv = 0.0;
        for b in 0..n {
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..wd {
                        let at = |ii: usize, jj: usize| xh[((b * c + ch) * h + ii) * wd + jj];
                        if i + 1 < h {
                            tv += (at(i + 1, j) - at(i, j)).powi(2);
                        }
                        if j + 1 < wd {
                            tv += (at(i, j + 1) - at(i, j)).powi(2);
                        }
                    }
                }
            }
        }
        tv /= n as f64;
        let got = tv_loss(&tensor(&shape, xh.clone())).unwrap();
        ensure(close(got, tv, tol), || format!("tv {got} vs {tv}"))?;

        // Feature sets at two blocks; style targets carry batch 1.
        let keys = [((2, 1), [n, 4, 3, 3]), ((4, 1), [n, 2, 2, 2])];
        let mut fs = Vec::new();
        let mut fg = Vec::new();
        let mut fx = Vec::new();
        for (k, s) in keys {
            let m: usize = s[1] * s[2] * s[3];
            fs.push((k, tensor(&[1, s[1], s[2], s[3]], uniform(&mut r, m, -1.0, 1.0))));
            fg.push((k, tensor(&s, uniform(&mut r, n * m, -1.0, 1.0))));
            fx.push((k, tensor(&s, uniform(&mut r, n * m, -1.0, 1.0))));
        }
        let (mut style, mut content) = (0.0, 0.0);
        for (((k, ts), (_, tg)), (_, tx)) in fs.iter().zip(&fg).zip(&fx) {
            let s = tg.shape();
            let (ch, hw) = (s[1], s[2] * s[3]);
            let gs = oracle_gram(ts.data(), ch, hw);
            for b in 0..n {
                let part = &tg.data()[b * ch * hw..(b + 1) * ch * hw];
                let gg = oracle_gram(part, ch, hw);
                let fro: f64 = gg.iter().zip(&gs).map(|(a, b)| (a - b).powi(2)).sum();
                style += w.block_weights[k.0 - 1] * fro / hw as f64 / n as f64;
                let xp = &tx.data()[b * ch * hw..(b + 1) * ch * hw];
                let sq: f64 = part.iter().zip(xp).map(|(a, b)| (a - b).powi(2)).sum();
                content += sq / hw as f64 / n as f64;
            }
        }
        let (fs, fg, fx) = (feature_set(fs), feature_set(fg), feature_set(fx));
        let got = style_loss(&fs, &fg, &w).unwrap();
        ensure(close(got, style, tol), || format!("style {got} vs {style}"))?;
        let got = content_loss(&fx, &fg).unwrap();
        ensure(close(got, content, tol), || format!("content {got} vs {content}"))?;
    }

    // Otsu: exhaustive sweep over the 256-bin histogram of FOV values.
    for trial in 0..20 {
        let n = 400;
        let fov: Vec<u8> = (0..n).map(|_| r.random_bool(0.8) as u8).collect();
        let prob: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.3) { r.random_range(0.55..1.0) } else { r.random_range(0.0..0.5) })
            .collect();
        let bins = OTSU_BINS;
        let mut hist = vec![0.0; bins];
        for i in 0..n {
            if fov[i] == 1 {
                hist[((prob[i] * bins as f64).floor() as usize).min(bins - 1)] += 1.0;
            }
        }
        let total: f64 = hist.iter().sum();
        let mu_t: f64 = hist.iter().enumerate().map(|(i, h)| i as f64 * h).sum::<f64>() / total;
        let (mut best_k, mut best) = (0, f64::NEG_INFINITY);
        for k in 0..bins - 1 {
            let w0: f64 = hist[..=k].iter().sum::<f64>() / total;
            let w1 = 1.0 - w0;
            if w0 == 0.0 || w1 <= 0.0 {
                continue;
            }
            let mu0 = hist[..=k].iter().enumerate().map(|(i, h)| i as f64 * h).sum::<f64>() / total / w0;
            let mu1 = (mu_t - w0 * mu0) / w1;
            let var = w0 * w1 * (mu0 - mu1).powi(2);
            if var > best {
                best = var;
                best_k = k;
            }
        }
        let t = (best_k + 1) as f64 / bins as f64;
        let (got, mask) = otsu_threshold(&prob, &fov).unwrap();
        ensure(got == t, || format!("otsu trial {trial}: {got} vs sweep {t}"))?;
        let expect: Vec<u8> = (0..n).map(|i| (fov[i] == 1 && prob[i] >= t) as u8).collect();
        ensure(mask == expect, || format!("otsu mask differs in trial {trial}"))?;
    }

    // AUC-ROC: P(pos > neg) + ½ P(tie) over all pairs.
    for trial in 0..20 {
        let n = 50;
        let gold: Vec<u8> = (0..n).map(|i| (i % 3 == 0 || r.random_bool(0.2)) as u8).collect();
        let score: Vec<f64> = (0..n).map(|_| (r.random_range(0..12) as f64) / 11.0).collect();
        let fov = vec![1u8; n];
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in (0..n).filter(|&i| gold[i] == 1) {
            for j in (0..n).filter(|&j| gold[j] == 0) {
                pairs += 1.0;
                wins += if score[i] > score[j] {
                    1.0
                } else if score[i] == score[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let got = auc_roc(&score, &gold, &fov).unwrap();
        ensure((got - wins / pairs).abs() <= tol, || format!("auc trial {trial}: {got} vs {}", wins / pairs))?;
    }
    Ok("gram, l1, bce, tv, style, content (10 trials); otsu (20); auc-roc (20)".into())
}

// ---------------------------------------------------------------------------
// 3. Architecture at 512

fn criterion_3() -> Outcome {
    let gen = NetworkSpec::new(Role::Synthesis, 512);
    let shapes = gen.layer_shapes().map_err(|e| e.to_string())?;
    ensure(shapes[0].output == (64, 256, 256), || format!("enc1 {:?}", shapes[0].output))?;
    let junction = shapes
        .iter()
        .find(|l| l.name.starts_with("dec") && l.input.1 == 8)
        .ok_or("no decoder layer at 8x8")?;
    ensure(junction.input.0 == 768 && junction.output == (512, 16, 16), || format!("8x8 junction {junction:?}"))?;
    let disc = NetworkSpec::new(Role::Discriminator, 512);
    let ch = disc.encoder_channels();
    ensure(ch[..5] == [32, 64, 128, 256, 512] && ch[5..].iter().all(|&c| c == 512), || format!("discriminator {ch:?}"))?;

    // Real forward passes confirm the plan and the output ranges.
    let mut g = build_network(&gen, 3).map_err(|e| e.to_string())?;
    let mut w1 = None;
    g.visit_params(&mut |name, p| {
        if w1.is_none() && name.starts_with("enc1") {
            w1 = Some(p.value.shape().to_vec());
        }
    });
    ensure(w1.as_deref() == Some(&[64, 2, 4, 4][..]), || format!("enc1 kernel {w1:?}"))?;
    let mut r = rng::stream(3, "acceptance-arch");
    let mask = tensor(&[1, 1, 512, 512], (0..512 * 512).map(|_| r.random_bool(0.1) as u8 as f64 * 2.0 - 1.0).collect());
    let z = sample_noise(1, 1.0, &mut r).unwrap();
    let img = generator_forward(&mut g, &mask, &z, Phase::Inference).map_err(|e| e.to_string())?;
    ensure(img.shape() == [1, 3, 512, 512], || format!("generator output {:?}", img.shape()))?;
    let (lo, hi) = img.min_max();
    ensure(lo >= -1.0 && hi <= 1.0, || format!("generator range [{lo}, {hi}]"))?;
    drop(g);
    let mut d = build_network(&disc, 4).map_err(|e| e.to_string())?;
    let score = discriminator_forward(&mut d, &img, &mask, Phase::Inference).map_err(|e| e.to_string())?;
    ensure(score.shape() == [1, 1], || format!("discriminator output {:?}", score.shape()))?;
    let s = score.data()[0];
    ensure(s > 0.0 && s < 1.0, || format!("discriminator score {s}"))?;
    Ok(format!("enc1 64x256x256, 8x8 junction 768 -> 512x16x16, D filters {ch:?}, G in [{lo:.3}, {hi:.3}], D {s:.4}"))
}

// ---------------------------------------------------------------------------
// 4. Update schedule and Adam

fn toy_samples(n: usize, seed: u64) -> (Vec<FundusSample>, Vec<PreprocessedSample>) {
    let raw = make_synthetic_dataset(n, 64, seed, &SyntheticParams::default()).unwrap();
    let pre = raw.iter().map(|s| preprocess(s, DatasetKind::Synthetic, 64).unwrap()).collect();
    (raw, pre)
}

fn criterion_4() -> Outcome {
    let (_, pre) = toy_samples(8, 4);
    let cfg = TrainConfig { g_base_filters: 4, d_base_filters: 2, batch_size: 2, ..TrainConfig::desk(Mode::Segmentation) };
    let mut t = Trainer::new(cfg).map_err(|e| e.to_string())?;
    let mut r = rng::stream(4, "acceptance-schedule");
    for _ in 0..100 {
        let a = r.random_range(0..pre.len());
        let b = (a + 1 + r.random_range(0..pre.len() - 1)) % pre.len();
        t.train_step(&[&pre[a], &pre[b]]).map_err(|e| e.to_string())?;
    }
    let (gv, dv) = (t.generator().version(), t.discriminator().version());
    ensure(dv == 100 && (gv as i64 - 2 * dv as i64).abs() <= 1, || format!("versions G {gv}, D {dv}"))?;

    // f(θ) = ½·a·(θ − c)², so ∇f = a·(θ − c).
    let (a, c) = (3.0, 0.7);
    let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
    let mut opt = Adam::new(cfg);
    let mut p = [Param::new(tensor(&[1], vec![-1.2]))];
    let (mut theta, mut m, mut v) = (-1.2f64, 0.0f64, 0.0f64);
    let mut worst = 0.0f64;
    for step in 1..=200 {
        let g = a * (theta - c);
        p[0].grad_mut()[0] = g;
        opt.step_params(&mut p);
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let m_hat = m / (1.0 - cfg.beta1.powi(step));
        let v_hat = v / (1.0 - cfg.beta2.powi(step));
        theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        worst = worst.max((p[0].value.data()[0] - theta).abs());
        p[0].zero_grad();
    }
    ensure(worst <= 1e-12, || format!("adam deviates by {worst:e}"))?;
    ensure((theta - c).abs() < 0.05, || format!("adam ended at {theta}"))?;
    Ok(format!("G {gv} / D {dv} updates after 100 steps; adam max deviation {worst:.1e} over 200 steps"))
}

// ---------------------------------------------------------------------------
// 5, 6. Toy training on 200 synthetic samples

const TOY_SEED: u64 = 2024;
const TOY_HELDOUT: usize = 20;

struct Toy {
    raw: Vec<FundusSample>,
    pre: Vec<PreprocessedSample>,
}

impl Toy {
    fn new() -> Self {
        let (raw, pre) = toy_samples(200, TOY_SEED);
        Toy { raw, pre }
    }

    fn train_part(&self) -> Vec<PreprocessedSample> {
        self.pre[..200 - TOY_HELDOUT].to_vec()
    }

    fn heldout(&self) -> Vec<(FundusSample, PreprocessedSample)> {
        self.raw[200 - TOY_HELDOUT..].iter().cloned().zip(self.pre[200 - TOY_HELDOUT..].iter().cloned()).collect()
    }
}

fn toy_config(mode: Mode, epochs: usize) -> TrainConfig {
    TrainConfig { epochs, patience: 0, seed: TOY_SEED, ..TrainConfig::desk(mode) }
}

fn heldout_dice(ckpt: &Checkpoint, held: &[(FundusSample, PreprocessedSample)]) -> Result<f64, String> {
    let mut seg = ckpt.generator.restore().map_err(|e| e.to_string())?;
    let report = evaluate_dataset(&mut seg, held, DatasetKind::Synthetic, BTreeMap::new()).map_err(|e| e.to_string())?;
    Ok(report.aggregate.dice)
}

fn criterion_5(toy: &Toy) -> Outcome {
    let cfg = toy_config(Mode::Segmentation, 30);
    let lambda = cfg.loss.lambda_seg;
    let split = split_train_val(toy.train_part(), TOY_SEED).map_err(|e| e.to_string())?;
    let mut t = Trainer::new(cfg).map_err(|e| e.to_string())?;
    let held = toy.heldout();
    let untrained = heldout_dice(&t.checkpoint(None, None), &held)?;
    let (best, log) = train(&mut t, &split, &mut |_, _| Ok(())).map_err(|e| e.to_string())?;
    let trained = heldout_dice(&best, &held)?;
    ensure(lambda == 10.0, || format!("lambda {lambda}"))?;
    ensure(trained >= 0.70 && untrained <= 0.30, || {
        format!("held-out dice trained {trained:.4} (need >= 0.70), untrained {untrained:.4} (need <= 0.30)")
    })?;
    Ok(format!(
        "held-out dice {trained:.4} (epoch {:?} of {}), untrained {untrained:.4}",
        best.epoch,
        log.epochs.len()
    ))
}

fn l1(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn criterion_6(toy: &Toy) -> Outcome {
    let cfg = toy_config(Mode::SynthesisL1, 10);
    let split = split_train_val(toy.train_part(), TOY_SEED).map_err(|e| e.to_string())?;
    let mut t = Trainer::new(cfg).map_err(|e| e.to_string())?;
    let untrained = t.checkpoint(None, None);
    let (best, _) = train(&mut t, &split, &mut |_, _| Ok(())).map_err(|e| e.to_string())?;
    let mut g_new = best.generator.restore().map_err(|e| e.to_string())?;
    let mut g_old = untrained.generator.restore().map_err(|e| e.to_string())?;
    let mut r = rng::stream(TOY_SEED, "acceptance-draws");
    let (mut min_div, mut worst_margin) = (f64::INFINITY, f64::INFINITY);
    let (mut sum_new, mut sum_old) = (0.0, 0.0);
    for (_, p) in toy.heldout() {
        let y = migan_core::data::mask_batch(&[&p]).unwrap();
        let x = migan_core::data::image_batch(&[&p]).unwrap();
        let z: Vec<NoiseCode> = sample_noise(2, 1.0, &mut r).unwrap();
        let draws: Vec<(Tensor, Tensor)> = z
            .chunks(1)
            .map(|code| {
                (generate_with_codes(&mut g_new, &y, code).unwrap(), generate_with_codes(&mut g_old, &y, code).unwrap())
            })
            .collect();
        min_div = min_div.min(l1(&draws[0].0, &draws[1].0));
        for (img, old) in &draws {
            let (dn, d_o) = (l1(img, &x), l1(old, &x));
            worst_margin = worst_margin.min(d_o - dn);
            sum_new += dn;
            sum_old += d_o;
        }
    }
    let n = 2.0 * TOY_HELDOUT as f64;
    ensure(min_div > 0.01, || format!("two draws differ by only {min_div:.5} L1"))?;
    ensure(worst_margin > 0.0, || format!("an image is no closer than untrained (margin {worst_margin:.5})"))?;
    Ok(format!(
        "min draw-to-draw L1 {min_div:.4}; L1 to real {:.4} trained vs {:.4} untrained (best epoch {:?})",
        sum_new / n,
        sum_old / n,
        best.epoch
    ))
}

// ---------------------------------------------------------------------------
// 7. Metric sanity

fn criterion_7() -> Outcome {
    let (source, samples) = match std::env::var_os("MIGAN_DRIVE_ROOT") {
        Some(root) => ("DRIVE", load_dataset(Path::new(&root), DatasetKind::Drive).map_err(|e| e.to_string())?),
        None => ("synthetic stand-in, MIGAN_DRIVE_ROOT unset", toy_samples(20, 77).0),
    };
    let probs: Vec<Vec<f64>> = samples.iter().map(|s| s.mask.to_f64()).collect();
    let preds: Vec<Prediction> = samples
        .iter()
        .zip(&probs)
        .map(|(s, p)| Prediction { id: &s.id, prob: p, gold: &s.mask.data, fov: &s.fov.data })
        .collect();
    let gold = evaluate_predictions(&preds, BTreeMap::new()).map_err(|e| e.to_string())?;
    for m in &gold.per_image {
        ensure(m.dice == 1.0 && m.auc_roc == 1.0 && m.auc_pr == 1.0, || format!("{}: {m:?}", m.id))?;
    }
    ensure(gold.aggregate.dice == 1.0 && gold.aggregate.auc_roc == 1.0 && gold.aggregate.auc_pr == 1.0, || {
        format!("aggregate {:?}", gold.aggregate)
    })?;

    // A graded prediction, then the same with arbitrary values outside the FOV.
    let mut r = rng::stream(7, "acceptance-fov");
    let graded: Vec<Vec<f64>> = probs
        .iter()
        .map(|p| p.iter().map(|&v| (0.6 * v + 0.4 * r.random_range(0.0..1.0)).min(1.0)).collect())
        .collect();
    let perturbed: Vec<Vec<f64>> = graded
        .iter()
        .zip(&samples)
        .map(|(p, s)| p.iter().zip(&s.fov.data).map(|(&v, &f)| if f == 1 { v } else { r.random_range(0.0..1.0) }).collect())
        .collect();
    let report = |maps: &[Vec<f64>]| {
        let preds: Vec<Prediction> = samples
            .iter()
            .zip(maps)
            .map(|(s, p)| Prediction { id: &s.id, prob: p, gold: &s.mask.data, fov: &s.fov.data })
            .collect();
        evaluate_predictions(&preds, BTreeMap::new()).unwrap()
    };
    let (a, b) = (report(&graded), report(&perturbed));
    let bits = |r: &migan_core::eval::EvalReport| {
        r.per_image
            .iter()
            .flat_map(|m| [m.dice, m.auc_roc, m.auc_pr, m.otsu_threshold].map(f64::to_bits))
            .collect::<Vec<_>>()
    };
    ensure(bits(&a) == bits(&b), || "metrics changed when only out-of-FOV values changed".into())?;
    Ok(format!("{} images ({source}): gold scores 1.0 exactly; out-of-FOV perturbation bit-identical", samples.len()))
}

// ---------------------------------------------------------------------------
// 8. Determinism and checkpoint round trip

fn criterion_8() -> Outcome {
    let (_, pre) = toy_samples(24, 8);
    let run = || {
        let split = split_train_val(pre.clone(), 8).unwrap();
        let cfg = TrainConfig { epochs: 3, patience: 0, seed: 8, g_base_filters: 8, d_base_filters: 4, ..TrainConfig::desk(Mode::Segmentation) };
        let mut t = Trainer::new(cfg).unwrap();
        train(&mut t, &split, &mut |_, _| Ok(())).unwrap()
    };
    let (c1, l1) = run();
    let (c2, l2) = run();
    ensure(l1 == l2 && train_log_jsonl(&l1) == train_log_jsonl(&l2), || "train logs differ".into())?;
    ensure(c1 == c2, || "selected checkpoints differ".into())?;

    let dir = std::env::temp_dir().join(format!("migan-acceptance-{}", std::process::id()));
    let path = dir.join("best.ckpt");
    save_checkpoint(&path, &c1).map_err(|e| e.to_string())?;
    let back = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let bytes_a = std::fs::read(&path).unwrap();
    save_checkpoint(&path, &back).map_err(|e| e.to_string())?;
    let bytes_b = std::fs::read(&path).unwrap();
    let _ = std::fs::remove_dir_all(&dir);
    let tensor_bits = |c: &Checkpoint| {
        c.generator
            .tensors
            .iter()
            .chain(&c.discriminator.tensors)
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    ensure(back == c1 && tensor_bits(&back) == tensor_bits(&c1) && bytes_a == bytes_b, || "checkpoint round trip differs".into())?;
    let x = migan_core::data::zscore_batch(&[&pre[0], &pre[1]]).unwrap();
    let out = |c: &Checkpoint| {
        let mut g = c.generator.restore().unwrap();
        segmentor_forward(&mut g, &x, Phase::Inference).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    ensure(out(&c1) == out(&back), || "inference outputs differ after reload".into())?;
    Ok(format!("{} steps, {} epochs identical across runs; checkpoint bytes, tensors and outputs bit-exact", l1.steps.len(), l1.epochs.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let toy = std::cell::OnceCell::new();
    let toy = || toy.get_or_init(Toy::new);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("loss gradients vs finite differences", Box::new(criterion_1)),
        ("loss and metric oracles", Box::new(criterion_2)),
        ("architecture at 512", Box::new(criterion_3)),
        ("update schedule and Adam", Box::new(criterion_4)),
        ("toy segmentation", Box::new(|| criterion_5(toy()))),
        ("toy synthesis diversity", Box::new(|| criterion_6(toy()))),
        ("metric sanity", Box::new(criterion_7)),
        ("determinism", Box::new(criterion_8)),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = Duration::as_secs_f64(&start.elapsed());
        match outcome {
            Ok(detail) => println!("criterion {id} [{name}]: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} [{name}]: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
