//! Segmentation metrics restricted to field-of-view pixels.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{restore_original, zscore_batch, DatasetKind, FundusSample, PreprocessedSample};
use crate::error::{bail, Result};
use crate::networks::{segmentor_forward, NetworkState, Role};
use crate::ops::Phase;

pub const OTSU_BINS: usize = 256;

fn check_lengths(what: &str, a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        bail!(ShapeMismatch, "{what}: lengths {a}, {b}, {c}");
    }
    Ok(())
}

fn bin_of(p: f64) -> usize {
    (libm::floor(p * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// `true` when split `a = (num, den)` has strictly larger between-class
/// variance than `b`, compared exactly where the products fit in `u128`.
fn greater(a: (u128, u128), b: (u128, u128)) -> bool {
    match (a.0.checked_mul(b.1), b.0.checked_mul(a.1)) {
        (Some(l), Some(r)) => l > r,
        _ => (a.0 as f64 / a.1 as f64) > (b.0 as f64 / b.1 as f64),
    }
}

/// Otsu threshold over a 256-bin histogram of FOV probabilities.
///
/// Class 0 is bins `0..=k`. The reported threshold is the lower edge of bin
/// `k + 1`, so the mask is `prob ≥ t*` inside the FOV. Ties go to the lowest
/// `k`.
pub fn otsu_threshold(prob: &[f64], fov: &[u8]) -> Result<(f64, Vec<u8>)> {
    if prob.len() != fov.len() {
        bail!(ShapeMismatch, "otsu: {} scores, {} fov pixels", prob.len(), fov.len());
    }
    let mut hist = [0u64; OTSU_BINS];
    let mut first: Option<f64> = None;
    let mut distinct = false;
    for (&p, &f) in prob.iter().zip(fov) {
        if f == 0 {
            continue;
        }
        if !(0.0..=1.0).contains(&p) {
            bail!(Domain, "otsu: probability {p} outside [0, 1]");
        }
        match first {
            None => first = Some(p),
            Some(v) if v != p => distinct = true,
            _ => {}
        }
        hist[bin_of(p)] += 1;
    }
    if !distinct {
        bail!(DegenerateInput, "otsu: fewer than two distinct values inside the FOV");
    }
    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(b, &c)| b as u64 * c).sum();
    let (mut w0, mut s0) = (0u64, 0u64);
    let mut best: Option<(usize, (u128, u128))> = None;
    for (k, &count) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += count;
        s0 += k as u64 * count;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let s1 = total_sum - s0;
        // w0·w1·(μ0 − μ1)² = (s0·w1 − s1·w0)² / (w0·w1)
        let diff = (s0 as i128 * w1 as i128 - s1 as i128 * w0 as i128).unsigned_abs();
        let score = match diff.checked_mul(diff) {
            Some(num) => (num, w0 as u128 * w1 as u128),
            None => {
                let d = diff as f64;
                let v = d * d / (w0 as f64 * w1 as f64);
                ((v * 1e-6) as u128, 1)
            }
        };
        if best.is_none_or(|(_, b)| greater(score, b)) {
            best = Some((k, score));
        }
    }
    let Some((k, _)) = best else {
        bail!(DegenerateInput, "otsu: all FOV values fall into one histogram bin");
    };
    let mask = prob
        .iter()
        .zip(fov)
        .map(|(&p, &f)| (f == 1 && bin_of(p) > k) as u8)
        .collect();
    Ok(((k + 1) as f64 / OTSU_BINS as f64, mask))
}

/// `2|P∧G| / (|P| + |G|)` over FOV pixels; 1 when both are empty.
pub fn dice(pred: &[u8], gold: &[u8], fov: &[u8]) -> Result<f64> {
    check_lengths("dice", pred.len(), gold.len(), fov.len())?;
    let (mut inter, mut np, mut ng) = (0u64, 0u64, 0u64);
    for ((&p, &g), &f) in pred.iter().zip(gold).zip(fov) {
        if f == 0 {
            continue;
        }
        let (p, g) = ((p != 0) as u64, (g != 0) as u64);
        inter += p & g;
        np += p;
        ng += g;
    }
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (np + ng) as f64)
}

/// FOV scores sorted descending, grouped by equal score as
/// `(positives, negatives)`.
fn ranked_groups(prob: &[f64], gold: &[u8], fov: &[u8]) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    check_lengths("auc", prob.len(), gold.len(), fov.len())?;
    let mut pts: Vec<(f64, bool)> = Vec::new();
    for ((&p, &g), &f) in prob.iter().zip(gold).zip(fov) {
        if f == 1 {
            if p.is_nan() {
                bail!(Domain, "auc: NaN score");
            }
            pts.push((p, g != 0));
        }
    }
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last: Option<f64> = None;
    for (p, pos) in pts {
        if last != Some(p) {
            groups.push((0, 0));
            last = Some(p);
        }
        let g = groups.last_mut().expect("pushed above");
        if pos {
            g.0 += 1
        } else {
            g.1 += 1
        }
    }
    let pos = groups.iter().map(|g| g.0).sum();
    let neg = groups.iter().map(|g| g.1).sum();
    Ok((groups, pos, neg))
}

/// Trapezoidal area under the ROC curve over FOV pixels, equal to
/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`.
pub fn auc_roc(prob: &[f64], gold: &[u8], fov: &[u8]) -> Result<f64> {
    let (groups, pos, neg) = ranked_groups(prob, gold, fov)?;
    if pos == 0 || neg == 0 {
        bail!(SingleClass, "auc_roc needs both classes inside the FOV ({pos} positive, {neg} negative)");
    }
    // Twice the area in units of pos·neg, accumulated exactly.
    let (mut tp, mut twice) = (0u128, 0u128);
    for (p, n) in groups {
        let (p, n) = (p as u128, n as u128);
        twice += n * (2 * tp + p);
        tp += p;
    }
    Ok(twice as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Step-wise area under the precision-recall curve (average precision).
pub fn auc_pr(prob: &[f64], gold: &[u8], fov: &[u8]) -> Result<f64> {
    let (groups, pos, _) = ranked_groups(prob, gold, fov)?;
    if pos == 0 {
        bail!(NoPositive, "auc_pr needs a positive pixel inside the FOV");
    }
    let (mut tp, mut fp, mut area) = (0u64, 0u64, 0.0);
    for (p, n) in groups {
        tp += p;
        fp += n;
        if p > 0 {
            area += p as f64 / pos as f64 * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub dice: f64,
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub otsu_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dice: f64,
    pub auc_roc: f64,
    pub auc_pr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sorted by id.
    pub per_image: Vec<ImageMetrics>,
    /// Unweighted means over images.
    pub aggregate: Aggregate,
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    /// Markdown table with one row per dataset label.
    pub fn table(rows: &[(&str, &EvalReport)]) -> String {
        let mut out = String::from("| Dataset | Dice | AUC ROC | AUC PR |\n|---|---|---|---|\n");
        for (name, r) in rows {
            out += &format!(
                "| {} | {:.3} | {:.3} | {:.3} |\n",
                name, r.aggregate.dice, r.aggregate.auc_roc, r.aggregate.auc_pr
            );
        }
        out
    }
}

/// A probability map and its reference, all in one geometry.
#[derive(Debug, Clone, Copy)]
pub struct Prediction<'a> {
    pub id: &'a str,
    pub prob: &'a [f64],
    pub gold: &'a [u8],
    pub fov: &'a [u8],
}

pub fn evaluate_image(p: &Prediction<'_>) -> Result<ImageMetrics> {
    let (t, mask) = otsu_threshold(p.prob, p.fov)?;
    Ok(ImageMetrics {
        id: p.id.into(),
        dice: dice(&mask, p.gold, p.fov)?,
        auc_roc: auc_roc(p.prob, p.gold, p.fov)?,
        auc_pr: auc_pr(p.prob, p.gold, p.fov)?,
        otsu_threshold: t,
    })
}

/// Metrics for ready-made probability maps.
pub fn evaluate_predictions(preds: &[Prediction<'_>], config: BTreeMap<String, String>) -> Result<EvalReport> {
    if preds.is_empty() {
        bail!(InsufficientData, "nothing to evaluate");
    }
    let mut per_image = preds.iter().map(evaluate_image).collect::<Result<Vec<_>>>()?;
    per_image.sort_by(|a, b| a.id.cmp(&b.id));
    let n = per_image.len() as f64;
    let mean = |f: fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    let aggregate = Aggregate {
        dice: mean(|m| m.dice),
        auc_roc: mean(|m| m.auc_roc),
        auc_pr: mean(|m| m.auc_pr),
    };
    Ok(EvalReport {
        per_image,
        aggregate,
        config,
    })
}

/// Probability map at network resolution for one preprocessed sample.
pub fn segment(segmentor: &mut NetworkState, sample: &PreprocessedSample) -> Result<Vec<f64>> {
    if segmentor.role() != Role::Segmentor {
        bail!(Mode, "segmentation needs a segmentor network, got {}", segmentor.role().name());
    }
    let x = zscore_batch(&[sample])?;
    Ok(segmentor_forward(segmentor, &x, Phase::Inference)?.into_vec())
}

/// Segments every sample, restores the maps to the original geometry and
/// scores them against the original masks.
pub fn evaluate_dataset(
    segmentor: &mut NetworkState,
    samples: &[(FundusSample, PreprocessedSample)],
    kind: DatasetKind,
    config: BTreeMap<String, String>,
) -> Result<EvalReport> {
    let mut maps = Vec::with_capacity(samples.len());
    for (orig, pre) in samples {
        let prob = segment(segmentor, pre)?;
        maps.push(restore_original(&prob, pre.size(), orig, kind)?);
    }
    let preds: Vec<Prediction<'_>> = samples
        .iter()
        .zip(&maps)
        .map(|((orig, _), prob)| Prediction {
            id: &orig.id,
            prob,
            gold: &orig.mask.data,
            fov: &orig.fov.data,
        })
        .collect();
    evaluate_predictions(&preds, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng as _;

    /// Exhaustive sweep over all 256 candidate splits, computed from the
    /// pixels rather than a histogram.
    fn otsu_oracle(prob: &[f64], fov: &[u8]) -> usize {
        let vals: Vec<i128> = prob
            .iter()
            .zip(fov)
            .filter(|(_, &f)| f == 1)
            .map(|(&p, _)| ((p * 256.0).floor() as i128).min(255))
            .collect();
        let n = vals.len() as i128;
        let total: i128 = vals.iter().sum();
        let mut best: Option<(usize, i128, i128)> = None;
        for k in 0..255 {
            let w0 = vals.iter().filter(|&&v| v <= k as i128).count() as i128;
            let s0: i128 = vals.iter().filter(|&&v| v <= k as i128).sum();
            if w0 == 0 || w0 == n {
                continue;
            }
            let num = (n * s0 - total * w0).pow(2);
            let den = w0 * (n - w0);
            match best {
                Some((_, bn, bd)) if num * bd <= bn * den => {}
                _ => best = Some((k, num, den)),
            }
        }
        best.unwrap().0
    }

    #[test]
    fn otsu_two_valued() {
        let prob: Vec<f64> = (0..100).map(|i| if i < 60 { 0.2 } else { 0.8 }).collect();
        let fov = vec![1u8; 100];
        let (t, mask) = otsu_threshold(&prob, &fov).unwrap();
        assert!(t > 0.2 && t < 0.8);
        for i in 0..100 {
            assert_eq!(mask[i], (i >= 60) as u8);
        }
        assert_eq!(t, (otsu_oracle(&prob, &fov) + 1) as f64 / 256.0);
    }

    #[test]
    fn otsu_on_gold_recovers_gold_and_ignores_outside() {
        let gold: Vec<u8> = (0..64).map(|i| (i % 7 == 0) as u8).collect();
        let prob: Vec<f64> = gold.iter().map(|&g| g as f64).collect();
        let mut fov = vec![1u8; 64];
        fov[0] = 0;
        let (_, mask) = otsu_threshold(&prob, &fov).unwrap();
        let expected: Vec<u8> = gold.iter().zip(&fov).map(|(g, f)| g & f).collect();
        assert_eq!(mask, expected);
        assert!(matches!(
            otsu_threshold(&[0.3; 8], &[1; 8]),
            Err(crate::Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn otsu_matches_oracle_on_random_maps() {
        let mut r = rng::stream(1, "otsu");
        for _ in 0..50 {
            let n = r.random_range(10..300);
            let prob: Vec<f64> = (0..n).map(|_| r.random::<f64>().powf(r.random_range(0.5..3.0))).collect();
            let fov: Vec<u8> = (0..n).map(|_| (r.random::<f64>() < 0.8) as u8).collect();
            let (t, _) = otsu_threshold(&prob, &fov).unwrap();
            assert_eq!(t, (otsu_oracle(&prob, &fov) + 1) as f64 / 256.0);
        }
    }

    #[test]
    fn dice_examples() {
        let fov = vec![1u8; 8];
        let a = [1, 1, 1, 1, 0, 0, 0, 0];
        assert_eq!(dice(&a, &a, &fov).unwrap(), 1.0);
        assert_eq!(dice(&a, &[0, 0, 0, 0, 1, 1, 1, 1], &fov).unwrap(), 0.0);
        assert!((dice(&[1, 1, 0, 0, 0, 0, 0, 0], &a, &fov).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice(&[0; 8], &[0; 8], &fov).unwrap(), 1.0);
        assert!(matches!(dice(&a, &a, &[1; 3]), Err(crate::Error::ShapeMismatch(_))));
    }

    fn pairwise_auc(prob: &[f64], gold: &[u8]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &pi) in prob.iter().enumerate() {
            for (j, &pj) in prob.iter().enumerate() {
                if gold[i] == 1 && gold[j] == 0 {
                    pairs += 1.0;
                    if pi > pj {
                        wins += 1.0
                    } else if pi == pj {
                        wins += 0.5
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_roc_examples() {
        let gold = [1u8, 1, 0, 1, 0, 0];
        let fov = [1u8; 6];
        let prob: Vec<f64> = gold.iter().map(|&g| g as f64).collect();
        assert_eq!(auc_roc(&prob, &gold, &fov).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.4; 6], &gold, &fov).unwrap(), 0.5);
        let s = [0.9, 0.8, 0.7, 0.4, 0.3, 0.2];
        assert!((auc_roc(&s, &gold, &fov).unwrap() - pairwise_auc(&s, &gold)).abs() < 1e-12);
        assert!((auc_roc(&s, &gold, &fov).unwrap() - 8.0 / 9.0).abs() < 1e-12);
        assert!(matches!(auc_roc(&s, &[1; 6], &fov), Err(crate::Error::SingleClass(_))));
    }

    #[test]
    fn auc_roc_matches_pairwise_on_random_instances() {
        let mut r = rng::stream(2, "auc");
        for _ in 0..20 {
            // Coarse scores so ties occur.
            let prob: Vec<f64> = (0..50).map(|_| (r.random_range(0..12) as f64) / 11.0).collect();
            let mut gold: Vec<u8> = (0..50).map(|_| r.random_bool(0.3) as u8).collect();
            gold[0] = 1;
            gold[1] = 0;
            let fov = vec![1u8; 50];
            assert!((auc_roc(&prob, &gold, &fov).unwrap() - pairwise_auc(&prob, &gold)).abs() < 1e-12);
        }
    }

    /// Threshold sweep over every distinct score, step-wise in recall.
    fn ap_oracle(prob: &[f64], gold: &[u8]) -> f64 {
        let mut ts: Vec<f64> = prob.to_vec();
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        let pos = gold.iter().filter(|&&g| g == 1).count() as f64;
        let (mut prev_recall, mut area) = (0.0, 0.0);
        for t in ts {
            let tp = prob.iter().zip(gold).filter(|(&p, &g)| p >= t && g == 1).count() as f64;
            let all = prob.iter().filter(|&&p| p >= t).count() as f64;
            let recall = tp / pos;
            area += (recall - prev_recall) * tp / all;
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn auc_pr_examples() {
        let gold = [1u8, 0, 0, 1, 0];
        let fov = [1u8; 5];
        let prob: Vec<f64> = gold.iter().map(|&g| g as f64).collect();
        assert_eq!(auc_pr(&prob, &gold, &fov).unwrap(), 1.0);
        assert!((auc_pr(&[0.5; 5], &gold, &fov).unwrap() - 0.4).abs() < 1e-15);
        let mut r = rng::stream(3, "ap");
        for _ in 0..20 {
            let prob: Vec<f64> = (0..30).map(|_| (r.random_range(0..8) as f64) / 7.0).collect();
            let mut gold: Vec<u8> = (0..30).map(|_| r.random_bool(0.4) as u8).collect();
            gold[0] = 1;
            assert!((auc_pr(&prob, &gold, &[1; 30]).unwrap() - ap_oracle(&prob, &gold)).abs() < 1e-12);
        }
        assert!(matches!(auc_pr(&prob, &[0; 5], &fov), Err(crate::Error::NoPositive(_))));
    }

    #[test]
    fn gold_as_prediction_scores_one() {
        let gold: Vec<u8> = (0..100).map(|i| (i % 5 == 0) as u8).collect();
        let prob: Vec<f64> = gold.iter().map(|&g| g as f64).collect();
        let fov = vec![1u8; 100];
        let p = Prediction {
            id: "x",
            prob: &prob,
            gold: &gold,
            fov: &fov,
        };
        let r = evaluate_predictions(&[p], BTreeMap::new()).unwrap();
        assert_eq!((r.aggregate.dice, r.aggregate.auc_roc, r.aggregate.auc_pr), (1.0, 1.0, 1.0));
        assert!(EvalReport::table(&[("toy", &r)]).contains("| toy | 1.000 | 1.000 | 1.000 |"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dice_is_symmetric(a in proptest::collection::vec(0u8..2, 40), b in proptest::collection::vec(0u8..2, 40), f in proptest::collection::vec(0u8..2, 40)) {
            prop_assert_eq!(dice(&a, &b, &f).unwrap(), dice(&b, &a, &f).unwrap());
        }

        #[test]
        fn auc_roc_ignores_monotone_transforms(seed in any::<u64>()) {
            let mut r = rng::stream(seed, "mono");
            let prob: Vec<f64> = (0..40).map(|_| r.random::<f64>()).collect();
            let mut gold: Vec<u8> = (0..40).map(|_| r.random_bool(0.5) as u8).collect();
            gold[0] = 1;
            gold[1] = 0;
            let fov = vec![1u8; 40];
            let warped: Vec<f64> = prob.iter().map(|p| (3.0 * p).exp() / 30.0 + 0.1).collect();
            prop_assert_eq!(auc_roc(&prob, &gold, &fov).unwrap(), auc_roc(&warped, &gold, &fov).unwrap());
        }

        #[test]
        fn outside_fov_never_matters(seed in any::<u64>()) {
            let mut r = rng::stream(seed, "fov");
            let n = 60;
            let prob: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
            let mut gold: Vec<u8> = (0..n).map(|_| r.random_bool(0.3) as u8).collect();
            let mut fov: Vec<u8> = (0..n).map(|_| r.random_bool(0.7) as u8).collect();
            fov[0] = 1; gold[0] = 1; fov[1] = 1; gold[1] = 0;
            let mut other = prob.clone();
            let mut other_gold = gold.clone();
            for i in 0..n {
                if fov[i] == 0 {
                    other[i] = r.random::<f64>();
                    other_gold[i] ^= 1;
                }
            }
            let a = Prediction { id: "a", prob: &prob, gold: &gold, fov: &fov };
            let b = Prediction { id: "a", prob: &other, gold: &other_gold, fov: &fov };
            prop_assert_eq!(evaluate_image(&a).unwrap(), evaluate_image(&b).unwrap());
        }

        #[test]
        fn raising_the_threshold_never_grows_the_mask(seed in any::<u64>()) {
            let mut r = rng::stream(seed, "mono-t");
            let prob: Vec<f64> = (0..50).map(|_| r.random::<f64>()).collect();
            let (t, mask) = otsu_threshold(&prob, &[1; 50]).unwrap();
            let count = |t: f64| prob.iter().filter(|&&p| p >= t).count();
            prop_assert_eq!(mask.iter().filter(|&&m| m == 1).count(), count(t));
            prop_assert!(count(t + 0.05) <= count(t));
        }
    }
}
