use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Source taps for one output coordinate: `(i0, i1, w1)` meaning
/// `(1 - w1)·src[i0] + w1·src[i1]`.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Half-pixel-centred bilinear resize of every plane of an NCHW batch to a
/// fixed output size.
#[derive(Debug, Clone)]
pub struct BilinearUpsample {
    out_h: usize,
    out_w: usize,
}

impl BilinearUpsample {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        BilinearUpsample { out_h, out_w }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.expect_rank4("bilinear input")?;
        if h == 0 || w == 0 {
            bail!(ShapeMismatch, "bilinear: empty input");
        }
        let ty = taps(h, self.out_h);
        let tx = taps(w, self.out_w);
        let mut out = Tensor::zeros(&[n, c, self.out_h, self.out_w]);
        let src = x.data();
        let dst = out.data_mut();
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut dst[p * self.out_h * self.out_w..(p + 1) * self.out_h * self.out_w];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let top = (1.0 - wx) * s[y0 * w + x0] + wx * s[y0 * w + x1];
                    let bot = (1.0 - wx) * s[y1 * w + x0] + wx * s[y1 * w + x1];
                    d[oy * self.out_w + ox] = (1.0 - wy) * top + wy * bot;
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of `forward` for an input of shape `input_shape`.
    pub fn backward(&self, input_shape: &[usize], grad_out: &Tensor) -> Tensor {
        let (h, w) = (input_shape[2], input_shape[3]);
        let ty = taps(h, self.out_h);
        let tx = taps(w, self.out_w);
        let mut g = Tensor::zeros(input_shape);
        let planes = input_shape[0] * input_shape[1];
        let go = grad_out.data();
        let gd = g.data_mut();
        for p in 0..planes {
            let s = &go[p * self.out_h * self.out_w..(p + 1) * self.out_h * self.out_w];
            let d = &mut gd[p * h * w..(p + 1) * h * w];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let v = s[oy * self.out_w + ox];
                    d[y0 * w + x0] += (1.0 - wy) * (1.0 - wx) * v;
                    d[y0 * w + x1] += (1.0 - wy) * wx * v;
                    d[y1 * w + x0] += wy * (1.0 - wx) * v;
                    d[y1 * w + x1] += wy * wx * v;
                }
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let up = BilinearUpsample::new(16, 16);
        let y = up.forward(&Tensor::full(&[1, 1, 4, 4], 0.75)).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn backward_is_adjoint() {
        let up = BilinearUpsample::new(8, 8);
        let x = Tensor::from_vec(&[1, 1, 2, 2], alloc::vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let probe = Tensor::from_vec(&[1, 1, 8, 8], (0..64).map(|i| (i as f64).sin()).collect()).unwrap();
        let y = up.forward(&x).unwrap();
        let g = up.backward(x.shape(), &probe);
        let lhs: f64 = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
