//! Single-plane resampling with half-pixel-centred coordinates.

use alloc::vec;
use alloc::vec::Vec;

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Four clamped source indices and weights per output coordinate.
fn cubic_taps(input: usize, output: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = libm::floor(src);
            let frac = src - base;
            let mut idx = [0; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let i = base as isize + k as isize - 1;
                idx[k] = i.clamp(0, input as isize - 1) as usize;
                w[k] = cubic(frac - (k as f64 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

/// Evaluated as `v₁ + Σ wₖ (vₖ − v₁)` so constant inputs are reproduced
/// exactly.
fn apply(taps: &([usize; 4], [f64; 4]), get: impl Fn(usize) -> f64) -> f64 {
    let (idx, w) = taps;
    let anchor = get(idx[1]);
    let mut acc = 0.0;
    for k in 0..4 {
        acc += w[k] * (get(idx[k]) - anchor);
    }
    anchor + acc
}

/// Separable bicubic resize of a row-major `h×w` plane.
pub fn bicubic(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w, "plane size");
    let tx = cubic_taps(w, out_w);
    let ty = cubic_taps(h, out_h);
    let mut rows = vec![0.0; h * out_w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (ox, t) in tx.iter().enumerate() {
            rows[y * out_w + ox] = apply(t, |i| row[i]);
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (oy, t) in ty.iter().enumerate() {
        for ox in 0..out_w {
            out[oy * out_w + ox] = apply(t, |i| rows[i * out_w + ox]);
        }
    }
    out
}

fn nearest_index(o: usize, input: usize, output: usize) -> usize {
    ((o as f64 + 0.5) * input as f64 / output as f64) as usize
}

/// Nearest-neighbour resize; preserves the value set of the input.
pub fn nearest<T: Copy>(src: &[T], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<T> {
    assert_eq!(src.len(), h * w, "plane size");
    let xs: Vec<usize> = (0..out_w).map(|o| nearest_index(o, w, out_w).min(w - 1)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let y = nearest_index(oy, h, out_h).min(h - 1);
        out.extend(xs.iter().map(|&x| src[y * w + x]));
    }
    out
}
