use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward};
use crate::error::{bail, Result};
use crate::rng::{truncated_normal, Rng};
use crate::tensor::Tensor;

/// How a forward pass treats batch normalization and whether it records the
/// intermediate values needed by `backward`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Batch statistics, running statistics updated, tape recorded.
    Train,
    /// Running statistics, tape recorded (gradients through a frozen net).
    Eval,
    /// Running statistics, nothing recorded.
    Inference,
}

impl Phase {
    fn records(self) -> bool {
        self != Phase::Inference
    }
}

/// A learnable tensor and its accumulated gradient. The gradient buffer is
/// allocated on first use.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    grad: Vec<f64>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Param { value, grad: Vec::new() }
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Value and gradient borrowed together, for optimizers.
    pub fn value_and_grad(&mut self) -> (&mut [f64], &[f64]) {
        self.grad_mut();
        (self.value.data_mut(), &self.grad)
    }
}

/// Named enumeration of parameters and non-learnable buffers, in a fixed
/// order. Serialization and optimizer state both rely on that order.
pub trait Module {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor)) {}
}

fn init_kernel(shape: &[usize], rng: &mut Rng, std: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| truncated_normal(rng, std)).collect();
    Tensor::from_vec(shape, data).expect("length computed from shape")
}

macro_rules! conv_layer {
    ($name:ident, $fwd:ident, $bwd:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone)]
        pub struct $name {
            pub weight: Param,
            pub bias: Param,
            stride: usize,
            pad: usize,
            input: Option<Tensor>,
        }

        impl $name {
            pub fn from_params(weight: Tensor, bias: Tensor, stride: usize, pad: usize) -> Self {
                $name {
                    weight: Param::new(weight),
                    bias: Param::new(bias),
                    stride,
                    pad,
                    input: None,
                }
            }

            pub fn forward(&mut self, x: &Tensor, phase: Phase) -> Result<Tensor> {
                let y = $fwd(x, &self.weight.value, Some(self.bias.value.data()), self.stride, self.pad)?;
                self.input = if phase.records() { Some(x.clone()) } else { None };
                Ok(y)
            }

            pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
                let x = match self.input.take() {
                    Some(x) => x,
                    None => bail!(Config, "{}: backward without a recorded forward", stringify!($name)),
                };
                self.weight.grad_mut();
                self.bias.grad_mut();
                let gi = $bwd(
                    &x,
                    &self.weight.value,
                    grad_out,
                    self.stride,
                    self.pad,
                    Some(&mut self.weight.grad),
                    Some(&mut self.bias.grad),
                    true,
                )?;
                Ok(gi.expect("input gradient requested"))
            }
        }

        impl Module for $name {
            fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
                f(&format!("{prefix}.weight"), &self.weight);
                f(&format!("{prefix}.bias"), &self.bias);
            }

            fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
                f(&format!("{prefix}.weight"), &mut self.weight);
                f(&format!("{prefix}.bias"), &mut self.bias);
            }
        }
    };
}

conv_layer!(Conv2d, conv2d, conv2d_backward, "Strided convolution, weight `[out, in, k, k]`.");
conv_layer!(
    ConvTranspose2d,
    conv_transpose2d,
    conv_transpose2d_backward,
    "Transposed convolution, weight `[in, out, k, k]`."
);

impl Conv2d {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        Self::from_params(init_kernel(&[cout, cin, k, k], rng, 0.02), Tensor::zeros(&[cout]), stride, pad)
    }
}

impl ConvTranspose2d {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        Self::from_params(init_kernel(&[cin, cout, k, k], rng, 0.02), Tensor::zeros(&[cout]), stride, pad)
    }
}

#[derive(Debug, Clone)]
struct BnTape {
    xhat: Tensor,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

/// Per-channel batch normalization over the N, H and W axes.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    eps: f64,
    momentum: f64,
    tape: Option<BnTape>,
}

impl BatchNorm2d {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(c: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::full(&[c], 1.0)),
            beta: Param::new(Tensor::zeros(&[c])),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::full(&[c], 1.0),
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
            tape: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, phase: Phase) -> Result<Tensor> {
        let (n, c, h, w) = x.expect_rank4("batch norm input")?;
        if c != self.gamma.value.len() {
            bail!(ShapeMismatch, "batch norm over {} channels got {c}", self.gamma.value.len());
        }
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut inv_std = vec![0.0; c];
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let batch_stats = phase == Phase::Train;
        for ch in 0..c {
            let (mean, var) = if batch_stats {
                let mut s = 0.0;
                for i in 0..n {
                    let base = (i * c + ch) * plane;
                    s += x.data()[base..base + plane].iter().sum::<f64>();
                }
                let mean = s / count;
                let mut v = 0.0;
                for i in 0..n {
                    let base = (i * c + ch) * plane;
                    v += x.data()[base..base + plane].iter().map(|&t| (t - mean) * (t - mean)).sum::<f64>();
                }
                let var = v / count;
                let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                let m = self.momentum;
                self.running_mean.data_mut()[ch] = (1.0 - m) * self.running_mean.data()[ch] + m * mean;
                self.running_var.data_mut()[ch] = (1.0 - m) * self.running_var.data()[ch] + m * unbiased;
                (mean, var)
            } else {
                (self.running_mean.data()[ch], self.running_var.data()[ch])
            };
            let is = 1.0 / libm::sqrt(var + self.eps);
            inv_std[ch] = is;
            let (g, b) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            for i in 0..n {
                let base = (i * c + ch) * plane;
                for k in base..base + plane {
                    let xh = (x.data()[k] - mean) * is;
                    xhat.data_mut()[k] = xh;
                    y.data_mut()[k] = g * xh + b;
                }
            }
        }
        self.tape = if phase.records() {
            Some(BnTape { xhat, inv_std, batch_stats })
        } else {
            None
        };
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let tape = match self.tape.take() {
            Some(t) => t,
            None => bail!(Config, "BatchNorm2d: backward without a recorded forward"),
        };
        let (n, c, h, w) = grad_out.dims4();
        let plane = h * w;
        let count = (n * plane) as f64;
        self.gamma.grad_mut();
        self.beta.grad_mut();
        let mut gx = Tensor::zeros(grad_out.shape());
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for i in 0..n {
                let base = (i * c + ch) * plane;
                for k in base..base + plane {
                    let dy = grad_out.data()[k];
                    sum_dy += dy;
                    sum_dy_xhat += dy * tape.xhat.data()[k];
                }
            }
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            let g = self.gamma.value.data()[ch];
            let is = tape.inv_std[ch];
            for i in 0..n {
                let base = (i * c + ch) * plane;
                for k in base..base + plane {
                    let dy = grad_out.data()[k];
                    gx.data_mut()[k] = if tape.batch_stats {
                        g * is * (dy - sum_dy / count - tape.xhat.data()[k] * sum_dy_xhat / count)
                    } else {
                        g * is * dy
                    };
                }
            }
        }
        Ok(gx)
    }
}

impl Module for BatchNorm2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&format!("{prefix}.gamma"), &self.gamma);
        f(&format!("{prefix}.beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}.running_mean"), &self.running_mean);
        f(&format!("{prefix}.running_var"), &self.running_var);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.running_mean"), &mut self.running_mean);
        f(&format!("{prefix}.running_var"), &mut self.running_var);
    }
}

/// Fully connected layer over flattened inputs: `(N, ...) -> (N, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: Param::new(init_kernel(&[output, input], rng, 0.02)),
            bias: Param::new(Tensor::zeros(&[output])),
            input: None,
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.weight.value.shape()[0], self.weight.value.shape()[1])
    }

    pub fn forward(&mut self, x: &Tensor, phase: Phase) -> Result<Tensor> {
        let (out, inp) = self.dims();
        let n = x.shape().first().copied().unwrap_or(0);
        if n == 0 || x.len() != n * inp {
            bail!(ShapeMismatch, "linear layer expects {inp} features per row, got {:?}", x.shape());
        }
        let mut y = Tensor::zeros(&[n, out]);
        super::gemm::gemm(n, inp, out, x.data(), false, self.weight.value.data(), true, 0.0, y.data_mut());
        for row in y.data_mut().chunks_mut(out) {
            for (v, b) in row.iter_mut().zip(self.bias.value.data()) {
                *v += b;
            }
        }
        self.input = if phase.records() { Some(x.clone()) } else { None };
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = match self.input.take() {
            Some(x) => x,
            None => bail!(Config, "Linear: backward without a recorded forward"),
        };
        let (out, inp) = self.dims();
        let n = x.shape()[0];
        let g = grad_out.data();
        self.weight.grad_mut();
        self.bias.grad_mut();
        super::gemm::gemm(out, n, inp, g, true, x.data(), false, 1.0, &mut self.weight.grad);
        for row in g.chunks(out) {
            for (b, v) in self.bias.grad.iter_mut().zip(row) {
                *b += v;
            }
        }
        let mut gx = Tensor::zeros(x.shape());
        super::gemm::gemm(n, out, inp, g, false, self.weight.value.data(), false, 0.0, gx.data_mut());
        Ok(gx)
    }
}

impl Module for Linear {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Pointwise nonlinearity with its backward tape.
#[derive(Debug, Clone)]
pub struct Activation {
    kind: ActKind,
    tape: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ActKind {
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn leaky_relu(slope: f64) -> Self {
        Activation { kind: ActKind::LeakyRelu(slope), tape: None }
    }

    pub fn tanh() -> Self {
        Activation { kind: ActKind::Tanh, tape: None }
    }

    pub fn sigmoid() -> Self {
        Activation { kind: ActKind::Sigmoid, tape: None }
    }

    pub fn forward(&mut self, x: &Tensor, phase: Phase) -> Tensor {
        let y = match self.kind {
            ActKind::LeakyRelu(s) => x.map(|v| if v > 0.0 { v } else { s * v }),
            ActKind::Tanh => x.map(libm::tanh),
            ActKind::Sigmoid => x.map(sigmoid),
        };
        self.tape = if phase.records() {
            // LeakyReLU needs the input sign, the others their output.
            Some(if matches!(self.kind, ActKind::LeakyRelu(_)) { x.clone() } else { y.clone() })
        } else {
            None
        };
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let t = match self.tape.take() {
            Some(t) => t,
            None => bail!(Config, "Activation: backward without a recorded forward"),
        };
        let mut g = grad_out.clone();
        for (gv, &tv) in g.data_mut().iter_mut().zip(t.data()) {
            *gv *= match self.kind {
                ActKind::LeakyRelu(s) => {
                    if tv > 0.0 {
                        1.0
                    } else {
                        s
                    }
                }
                ActKind::Tanh => 1.0 - tv * tv,
                ActKind::Sigmoid => tv * (1.0 - tv),
            };
        }
        Ok(g)
    }
}
