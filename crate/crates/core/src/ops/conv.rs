use alloc::vec;
use alloc::vec::Vec;

use super::gemm::gemm;
use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Geometry of a square-kernel convolution applied to a `c×h×w` plane stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            bail!(
                ShapeMismatch,
                "kernel {k} stride {stride} pad {pad} does not fit a {h}x{w} input"
            );
        }
        Ok(ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds `x` (`c×h×w`) into a `(c·k·k) × (ho·wo)` patch matrix.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let ncols = self.cols();
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let out = &mut cols[row * ncols..(row + 1) * ncols];
                    for oh in 0..self.ho {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        let seg = &mut out[oh * self.wo..(oh + 1) * self.wo];
                        if ih < 0 || ih >= self.h as isize {
                            seg.fill(0.0);
                            continue;
                        }
                        let src = &plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        for (ow, dst) in seg.iter_mut().enumerate() {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            *dst = if iw < 0 || iw >= self.w as isize {
                                0.0
                            } else {
                                src[iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters patch columns back, accumulating.
    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let ncols = self.cols();
        for c in 0..self.c {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oh in 0..self.ho {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        if ih < 0 || ih >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        for ow in 0..self.wo {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            if iw >= 0 && iw < self.w as isize {
                                dst[iw as usize] += src[oh * self.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_weight(weight: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    let s = weight.shape();
    if s.len() != 4 || s[2] != s[3] {
        bail!(ShapeMismatch, "{what}: weight must be [a, b, k, k], got {:?}", s);
    }
    Ok((s[0], s[1], s[2]))
}

/// Cross-correlation of an NCHW batch with `weight` of shape `[out, in, k, k]`.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (n, c, h, w) = x.expect_rank4("conv2d input")?;
    let (cout, cin, k) = check_weight(weight, "conv2d")?;
    if cin != c {
        bail!(ShapeMismatch, "conv2d: weight expects {cin} channels, input has {c}");
    }
    let g = ConvGeom::new(c, h, w, k, stride, pad)?;
    let mut out = Tensor::zeros(&[n, cout, g.ho, g.wo]);
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let in_plane = c * h * w;
    let out_plane = cout * g.cols();
    for i in 0..n {
        g.im2col(&x.data()[i * in_plane..(i + 1) * in_plane], &mut cols);
        let dst = &mut out.data_mut()[i * out_plane..(i + 1) * out_plane];
        gemm(cout, g.rows(), g.cols(), weight.data(), false, &cols, false, 0.0, dst);
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                for v in &mut dst[co * g.cols()..(co + 1) * g.cols()] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`conv2d`]. Parameter gradients are accumulated into
/// `grad_w`/`grad_b` when given; the input gradient is returned when
/// `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    grad_w: Option<&mut [f64]>,
    grad_b: Option<&mut [f64]>,
    want_input: bool,
) -> Result<Option<Tensor>> {
    let (n, c, h, w) = x.expect_rank4("conv2d input")?;
    let (cout, _, k) = check_weight(weight, "conv2d")?;
    let g = ConvGeom::new(c, h, w, k, stride, pad)?;
    if grad_out.shape() != [n, cout, g.ho, g.wo] {
        bail!(ShapeMismatch, "conv2d backward: grad shape {:?}", grad_out.shape());
    }
    let in_plane = c * h * w;
    let out_plane = cout * g.cols();
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let mut grad_in = if want_input { Some(Tensor::zeros(x.shape())) } else { None };
    let mut gw = grad_w;
    for i in 0..n {
        let go = &grad_out.data()[i * out_plane..(i + 1) * out_plane];
        if let Some(gw) = gw.as_deref_mut() {
            g.im2col(&x.data()[i * in_plane..(i + 1) * in_plane], &mut cols);
            gemm(cout, g.cols(), g.rows(), go, false, &cols, true, 1.0, gw);
        }
        if let Some(gi) = grad_in.as_mut() {
            gemm(g.rows(), cout, g.cols(), weight.data(), true, go, false, 0.0, &mut cols);
            g.col2im(&cols, &mut gi.data_mut()[i * in_plane..(i + 1) * in_plane]);
        }
    }
    if let Some(gb) = grad_b {
        accumulate_bias_grad(grad_out, gb);
    }
    Ok(grad_in)
}

fn accumulate_bias_grad(grad_out: &Tensor, gb: &mut [f64]) {
    let (n, c, h, w) = grad_out.dims4();
    let plane = h * w;
    for i in 0..n {
        for (co, g) in gb.iter_mut().enumerate().take(c) {
            let base = (i * c + co) * plane;
            *g += grad_out.data()[base..base + plane].iter().sum::<f64>();
        }
    }
}

fn transpose_geom(x: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<(ConvGeom, usize)> {
    let (_, c, h, w) = x.expect_rank4("conv_transpose2d input")?;
    let (cin, cout, k) = check_weight(weight, "conv_transpose2d")?;
    if cin != c {
        bail!(ShapeMismatch, "conv_transpose2d: weight expects {cin} channels, input has {c}");
    }
    if (h - 1) * stride + k < 2 * pad || (w - 1) * stride + k < 2 * pad {
        bail!(ShapeMismatch, "conv_transpose2d: padding {pad} too large");
    }
    let hout = (h - 1) * stride + k - 2 * pad;
    let wout = (w - 1) * stride + k - 2 * pad;
    let g = ConvGeom::new(cout, hout, wout, k, stride, pad)?;
    if g.ho != h || g.wo != w {
        bail!(ShapeMismatch, "conv_transpose2d: inconsistent geometry for {h}x{w}");
    }
    Ok((g, cin))
}

/// Transposed convolution (the adjoint of [`conv2d`]) with `weight` of shape
/// `[in, out, k, k]`. Output size is `(h - 1)·stride + k - 2·pad`.
pub fn conv_transpose2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (g, cin) = transpose_geom(x, weight, stride, pad)?;
    let n = x.shape()[0];
    let mut out = Tensor::zeros(&[n, g.c, g.h, g.w]);
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let in_plane = cin * g.cols();
    let out_plane = g.c * g.h * g.w;
    for i in 0..n {
        let xi = &x.data()[i * in_plane..(i + 1) * in_plane];
        gemm(g.rows(), cin, g.cols(), weight.data(), true, xi, false, 0.0, &mut cols);
        let dst = &mut out.data_mut()[i * out_plane..(i + 1) * out_plane];
        g.col2im(&cols, dst);
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                for v in &mut dst[co * g.h * g.w..(co + 1) * g.h * g.w] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    grad_w: Option<&mut [f64]>,
    grad_b: Option<&mut [f64]>,
    want_input: bool,
) -> Result<Option<Tensor>> {
    let (g, cin) = transpose_geom(x, weight, stride, pad)?;
    let n = x.shape()[0];
    if grad_out.shape() != [n, g.c, g.h, g.w] {
        bail!(ShapeMismatch, "conv_transpose2d backward: grad shape {:?}", grad_out.shape());
    }
    let in_plane = cin * g.cols();
    let out_plane = g.c * g.h * g.w;
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let mut grad_in = if want_input { Some(Tensor::zeros(x.shape())) } else { None };
    let mut gw = grad_w;
    for i in 0..n {
        g.im2col(&grad_out.data()[i * out_plane..(i + 1) * out_plane], &mut cols);
        if let Some(gi) = grad_in.as_mut() {
            let dst = &mut gi.data_mut()[i * in_plane..(i + 1) * in_plane];
            gemm(cin, g.rows(), g.cols(), weight.data(), false, &cols, false, 0.0, dst);
        }
        if let Some(gw) = gw.as_deref_mut() {
            let xi = &x.data()[i * in_plane..(i + 1) * in_plane];
            gemm(cin, g.cols(), g.rows(), xi, false, &cols, true, 1.0, gw);
        }
    }
    if let Some(gb) = grad_b {
        accumulate_bias_grad(grad_out, gb);
    }
    Ok(grad_in)
}

/// 2×2 max pooling with stride 2. Returns the pooled batch and, for every
/// output element, the flat index of the winning input element.
pub fn max_pool2x2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = x.expect_rank4("max_pool2x2 input")?;
    if h < 2 || w < 2 {
        bail!(ShapeMismatch, "max_pool2x2: input {h}x{w} is too small");
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let src = x.data();
    let dst = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                dst[o] = src[best];
                arg.push(best);
                o += 1;
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool2x2_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(input_shape);
    let dst = g.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        dst[idx] += v;
    }
    g
}
