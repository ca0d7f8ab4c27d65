//! The three trainable networks: the mask-to-image synthesis generator, the
//! image-to-vessel-map segmentor (same encoder–decoder template) and the
//! image/mask pair discriminator.
//!
//! Every convolution uses a 4×4 kernel with stride 2 and padding 1, so each
//! encoder layer halves the spatial size and each decoder layer doubles it.
//! There is no pooling. For an input of side `S` the encoder has
//! `log2(S) - 2` layers and ends at 4×4.
//!
//! Skip connections are mirror-symmetric: the output of encoder layer `k` is
//! concatenated onto the output of decoder layer `depth - k` before the next
//! decoder layer. The first decoder layer emits half the bottleneck width and
//! every later one emits the width of the encoder layer it is joined with, so
//! at `S = 512` the 8×8 junction carries `512 + 256 = 768` channels into a
//! deconvolution producing 16×16×512.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::ops::{
    Activation, BatchNorm2d, BilinearUpsample, Conv2d, ConvTranspose2d, Linear, Module, Param,
    Phase,
};
use crate::rng;
use crate::tensor::Tensor;

pub const NOISE_DIM: usize = 400;
/// Side of the grid the noise code is projected onto before upsampling.
pub const NOISE_GRID: usize = 32;
pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
const PAD: usize = 1;

/// A 400-dimensional latent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NoiseCode(Vec<f64>);

impl NoiseCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != NOISE_DIM {
            bail!(ShapeMismatch, "noise code must have {NOISE_DIM} entries, got {}", values.len());
        }
        Ok(NoiseCode(values))
    }

    pub fn zeros() -> Self {
        NoiseCode(alloc::vec![0.0; NOISE_DIM])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for NoiseCode {
    type Error = crate::Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        NoiseCode::new(v)
    }
}

impl From<NoiseCode> for Vec<f64> {
    fn from(z: NoiseCode) -> Vec<f64> {
        z.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Synthesis,
    Segmentor,
    Discriminator,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Synthesis => "synthesis",
            Role::Segmentor => "segmentor",
            Role::Discriminator => "discriminator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: Role,
    pub input_size: usize,
    pub base_filters: usize,
    pub leaky_slope: f64,
}

/// Input/output geometry of one layer, `(channels, height, width)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub input: (usize, usize, usize),
    pub output: (usize, usize, usize),
}

impl NetworkSpec {
    pub fn new(role: Role, input_size: usize) -> Self {
        let base_filters = match role {
            Role::Discriminator => 32,
            _ => 64,
        };
        NetworkSpec {
            role,
            input_size,
            base_filters,
            leaky_slope: 0.2,
        }
    }

    pub fn with_base_filters(mut self, base: usize) -> Self {
        self.base_filters = base;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 64 || !self.input_size.is_power_of_two() {
            bail!(Spec, "input size must be a power of two >= 64, got {}", self.input_size);
        }
        if self.base_filters == 0 {
            bail!(Spec, "base_filters must be positive");
        }
        if self.role != Role::Discriminator && self.base_filters < 2 {
            bail!(Spec, "generator base_filters must be at least 2");
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            bail!(Spec, "leaky slope must be finite and non-negative");
        }
        Ok(())
    }

    /// Number of stride-2 encoder layers; the last one ends at 4×4.
    pub fn depth(&self) -> usize {
        self.input_size.trailing_zeros() as usize - 2
    }

    fn max_filters(&self) -> usize {
        match self.role {
            // 32 doubling up to 512
            Role::Discriminator => self.base_filters * 16,
            // 64 doubling up to 512
            _ => self.base_filters * 8,
        }
    }

    pub fn encoder_channels(&self) -> Vec<usize> {
        let cap = self.max_filters();
        (0..self.depth())
            .map(|i| (self.base_filters << i.min(20)).min(cap))
            .collect()
    }

    /// Output channels of each decoder layer; the last entry is the
    /// network's output channel count. Empty for the discriminator.
    pub fn decoder_channels(&self) -> Vec<usize> {
        if self.role == Role::Discriminator {
            return Vec::new();
        }
        let enc = self.encoder_channels();
        let depth = enc.len();
        let mut dec = Vec::with_capacity(depth);
        dec.push(enc[depth - 1] / 2);
        for j in 1..depth - 1 {
            dec.push(enc[depth - 1 - j]);
        }
        dec.push(self.output_channels());
        dec
    }

    pub fn input_channels(&self) -> usize {
        match self.role {
            // mask + projected noise
            Role::Synthesis => 2,
            Role::Segmentor => 3,
            // image + mask
            Role::Discriminator => 4,
        }
    }

    pub fn output_channels(&self) -> usize {
        match self.role {
            Role::Synthesis => 3,
            Role::Segmentor | Role::Discriminator => 1,
        }
    }

    /// Static shape plan for every convolutional layer, without building
    /// the network.
    pub fn layer_shapes(&self) -> Result<Vec<LayerShape>> {
        self.validate()?;
        let enc = self.encoder_channels();
        let depth = enc.len();
        let s = self.input_size;
        let mut shapes = Vec::new();
        let mut c_in = self.input_channels();
        for (i, &c) in enc.iter().enumerate() {
            shapes.push(LayerShape {
                name: format!("enc{}", i + 1),
                input: (c_in, s >> i, s >> i),
                output: (c, s >> (i + 1), s >> (i + 1)),
            });
            c_in = c;
        }
        if self.role == Role::Discriminator {
            return Ok(shapes);
        }
        let dec = self.decoder_channels();
        let mut c_in = enc[depth - 1];
        for (j, &c) in dec.iter().enumerate() {
            let side_in = s >> (depth - j);
            shapes.push(LayerShape {
                name: format!("dec{}", j + 1),
                input: (c_in, side_in, side_in),
                output: (c, side_in * 2, side_in * 2),
            });
            if j + 1 < depth {
                c_in = c + enc[depth - 2 - j];
            }
        }
        Ok(shapes)
    }
}

#[derive(Debug, Clone)]
struct DownBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
    act: Activation,
}

impl DownBlock {
    fn new(cin: usize, cout: usize, slope: f64, rng: &mut rng::Rng) -> Self {
        DownBlock {
            conv: Conv2d::new(cin, cout, KERNEL, STRIDE, PAD, rng),
            bn: BatchNorm2d::new(cout),
            act: Activation::leaky_relu(slope),
        }
    }

    fn forward(&mut self, x: &Tensor, phase: Phase) -> Result<Tensor> {
        let h = self.conv.forward(x, phase)?;
        let h = self.bn.forward(&h, phase)?;
        Ok(self.act.forward(&h, phase))
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let g = self.act.backward(g)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }
}

impl Module for DownBlock {
    fn visit_params(&self, p: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit_params(&format!("{p}.conv"), f);
        self.bn.visit_params(&format!("{p}.bn"), f);
    }
    fn visit_params_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_params_mut(&format!("{p}.conv"), f);
        self.bn.visit_params_mut(&format!("{p}.bn"), f);
    }
    fn visit_buffers(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.bn.visit_buffers(&format!("{p}.bn"), f);
    }
    fn visit_buffers_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.bn.visit_buffers_mut(&format!("{p}.bn"), f);
    }
}

/// Deconvolution, followed by BN + LeakyReLU on hidden layers or by the
/// output squashing function on the last layer.
#[derive(Debug, Clone)]
struct UpBlock {
    deconv: ConvTranspose2d,
    bn: Option<BatchNorm2d>,
    act: Activation,
}

impl UpBlock {
    fn forward(&mut self, x: &Tensor, phase: Phase) -> Result<Tensor> {
        let mut h = self.deconv.forward(x, phase)?;
        if let Some(bn) = self.bn.as_mut() {
            h = bn.forward(&h, phase)?;
        }
        Ok(self.act.forward(&h, phase))
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let mut g = self.act.backward(g)?;
        if let Some(bn) = self.bn.as_mut() {
            g = bn.backward(&g)?;
        }
        self.deconv.backward(&g)
    }
}

impl Module for UpBlock {
    fn visit_params(&self, p: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.deconv.visit_params(&format!("{p}.deconv"), f);
        if let Some(bn) = &self.bn {
            bn.visit_params(&format!("{p}.bn"), f);
        }
    }
    fn visit_params_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.deconv.visit_params_mut(&format!("{p}.deconv"), f);
        if let Some(bn) = &mut self.bn {
            bn.visit_params_mut(&format!("{p}.bn"), f);
        }
    }
    fn visit_buffers(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(bn) = &self.bn {
            bn.visit_buffers(&format!("{p}.bn"), f);
        }
    }
    fn visit_buffers_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(bn) = &mut self.bn {
            bn.visit_buffers_mut(&format!("{p}.bn"), f);
        }
    }
}

/// Affine map from the noise code to a 32×32 grid, bilinearly resized to the
/// generator's input size.
#[derive(Debug, Clone)]
struct NoiseProjection {
    fc: Linear,
}

impl NoiseProjection {
    fn project(&mut self, z: &[NoiseCode], size: usize, phase: Phase) -> Result<Tensor> {
        let n = z.len();
        let mut flat = Vec::with_capacity(n * NOISE_DIM);
        for code in z {
            flat.extend_from_slice(code.as_slice());
        }
        let zt = Tensor::from_vec(&[n, NOISE_DIM], flat)?;
        let grid = self.fc.forward(&zt, phase)?.reshape(&[n, 1, NOISE_GRID, NOISE_GRID])?;
        BilinearUpsample::new(size, size).forward(&grid)
    }

    fn backward(&mut self, g: &Tensor) -> Result<()> {
        let (n, _, h, w) = g.dims4();
        let up = BilinearUpsample::new(h, w);
        let gg = up.backward(&[n, 1, NOISE_GRID, NOISE_GRID], g);
        self.fc.backward(&gg.reshape(&[n, NOISE_GRID * NOISE_GRID])?)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Generator {
    noise: Option<NoiseProjection>,
    enc: Vec<DownBlock>,
    dec: Vec<UpBlock>,
    enc_channels: Vec<usize>,
    input_shape: Option<Vec<usize>>,
}

impl Generator {
    fn build(spec: &NetworkSpec, rng: &mut rng::Rng) -> Self {
        let enc_channels = spec.encoder_channels();
        let dec_channels = spec.decoder_channels();
        let depth = enc_channels.len();
        let noise = (spec.role == Role::Synthesis).then(|| NoiseProjection {
            fc: Linear::new(NOISE_DIM, NOISE_GRID * NOISE_GRID, rng),
        });
        let mut enc = Vec::with_capacity(depth);
        let mut cin = spec.input_channels();
        for &c in &enc_channels {
            enc.push(DownBlock::new(cin, c, spec.leaky_slope, rng));
            cin = c;
        }
        let mut dec = Vec::with_capacity(depth);
        let mut cin = enc_channels[depth - 1];
        for (j, &c) in dec_channels.iter().enumerate() {
            let last = j + 1 == depth;
            dec.push(UpBlock {
                deconv: ConvTranspose2d::new(cin, c, KERNEL, STRIDE, PAD, rng),
                bn: (!last).then(|| BatchNorm2d::new(c)),
                act: if !last {
                    Activation::leaky_relu(spec.leaky_slope)
                } else if spec.role == Role::Synthesis {
                    Activation::tanh()
                } else {
                    Activation::sigmoid()
                },
            });
            if !last {
                cin = c + enc_channels[depth - 2 - j];
            }
        }
        Generator {
            noise,
            enc,
            dec,
            enc_channels,
            input_shape: None,
        }
    }

    fn forward(&mut self, input: &Tensor, phase: Phase) -> Result<Tensor> {
        let depth = self.enc.len();
        let mut skips: Vec<Tensor> = Vec::with_capacity(depth);
        let mut h = input.clone();
        for block in &mut self.enc {
            h = block.forward(&h, phase)?;
            skips.push(h.clone());
        }
        let mut d = self.dec[0].forward(&skips[depth - 1], phase)?;
        for j in 1..depth {
            let joined = Tensor::concat_channels(&skips[depth - 1 - j], &d)?;
            d = self.dec[j].forward(&joined, phase)?;
        }
        self.input_shape = Some(input.shape().to_vec());
        Ok(d)
    }

    /// Returns the gradient with respect to the network input.
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let depth = self.enc.len();
        let mut skip_grads: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();
        let mut g = grad.clone();
        for j in (1..depth).rev() {
            let gi = self.dec[j].backward(&g)?;
            let (g_skip, g_dec) = gi.split_channels(self.enc_channels[depth - 1 - j]);
            skip_grads[depth - 1 - j] = Some(g_skip);
            g = g_dec;
        }
        let mut g = self.dec[0].backward(&g)?;
        for i in (0..depth).rev() {
            if i < depth - 1 {
                if let Some(s) = skip_grads[i].take() {
                    g.add_assign(&s);
                }
            }
            g = self.enc[i].backward(&g)?;
        }
        Ok(g)
    }
}

impl Module for Generator {
    fn visit_params(&self, _: &str, f: &mut dyn FnMut(&str, &Param)) {
        if let Some(n) = &self.noise {
            n.fc.visit_params("noise.fc", f);
        }
        for (i, b) in self.enc.iter().enumerate() {
            b.visit_params(&format!("enc{}", i + 1), f);
        }
        for (j, b) in self.dec.iter().enumerate() {
            b.visit_params(&format!("dec{}", j + 1), f);
        }
    }
    fn visit_params_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(n) = &mut self.noise {
            n.fc.visit_params_mut("noise.fc", f);
        }
        for (i, b) in self.enc.iter_mut().enumerate() {
            b.visit_params_mut(&format!("enc{}", i + 1), f);
        }
        for (j, b) in self.dec.iter_mut().enumerate() {
            b.visit_params_mut(&format!("dec{}", j + 1), f);
        }
    }
    fn visit_buffers(&self, _: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, b) in self.enc.iter().enumerate() {
            b.visit_buffers(&format!("enc{}", i + 1), f);
        }
        for (j, b) in self.dec.iter().enumerate() {
            b.visit_buffers(&format!("dec{}", j + 1), f);
        }
    }
    fn visit_buffers_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.enc.iter_mut().enumerate() {
            b.visit_buffers_mut(&format!("enc{}", i + 1), f);
        }
        for (j, b) in self.dec.iter_mut().enumerate() {
            b.visit_buffers_mut(&format!("dec{}", j + 1), f);
        }
    }
}

#[derive(Debug, Clone)]
struct Discriminator {
    layers: Vec<DownBlock>,
    fc: Linear,
    head: Activation,
    feature_shape: Option<Vec<usize>>,
}

impl Discriminator {
    fn build(spec: &NetworkSpec, rng: &mut rng::Rng) -> Self {
        let channels = spec.encoder_channels();
        let mut layers = Vec::with_capacity(channels.len());
        let mut cin = spec.input_channels();
        for &c in &channels {
            layers.push(DownBlock::new(cin, c, spec.leaky_slope, rng));
            cin = c;
        }
        Discriminator {
            layers,
            // final feature map is always 4×4
            fc: Linear::new(cin * 16, 1, rng),
            head: Activation::sigmoid(),
            feature_shape: None,
        }
    }

    fn forward(&mut self, input: &Tensor, phase: Phase) -> Result<Tensor> {
        let mut h = input.clone();
        for l in &mut self.layers {
            h = l.forward(&h, phase)?;
        }
        let n = h.shape()[0];
        self.feature_shape = Some(h.shape().to_vec());
        let flat_len = h.len() / n;
        let logits = self.fc.forward(&h.reshape(&[n, flat_len])?, phase)?;
        Ok(self.head.forward(&logits, phase))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.head.backward(grad)?;
        let g = self.fc.backward(&g)?;
        let shape = match &self.feature_shape {
            Some(s) => s.clone(),
            None => bail!(Config, "discriminator backward without forward"),
        };
        let mut g = g.reshape(&shape)?;
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }
}

impl Module for Discriminator {
    fn visit_params(&self, _: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_params(&format!("layer{}", i + 1), f);
        }
        self.fc.visit_params("fc", f);
    }
    fn visit_params_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params_mut(&format!("layer{}", i + 1), f);
        }
        self.fc.visit_params_mut("fc", f);
    }
    fn visit_buffers(&self, _: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_buffers(&format!("layer{}", i + 1), f);
        }
    }
    fn visit_buffers_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_buffers_mut(&format!("layer{}", i + 1), f);
        }
    }
}

#[derive(Debug, Clone)]
enum Body {
    Generator(Generator),
    Discriminator(Discriminator),
}

/// A network's spec together with its parameters, normalization buffers and
/// the count of optimizer updates applied so far.
#[derive(Debug, Clone)]
pub struct NetworkState {
    spec: NetworkSpec,
    body: Body,
    version: u64,
}

/// Builds a freshly initialized network. Initialization is a deterministic
/// function of `(spec, seed)`.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<NetworkState> {
    spec.validate()?;
    let mut rng = rng::stream(seed, spec.role.name());
    let body = match spec.role {
        Role::Discriminator => Body::Discriminator(Discriminator::build(spec, &mut rng)),
        _ => Body::Generator(Generator::build(spec, &mut rng)),
    };
    Ok(NetworkState {
        spec: spec.clone(),
        body,
        version: 0,
    })
}

impl NetworkState {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn role(&self) -> Role {
        self.spec.role
    }

    /// Number of optimizer updates applied to this state.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn set_version(&mut self, v: u64) {
        self.version = v;
    }

    fn module(&self) -> &dyn Module {
        match &self.body {
            Body::Generator(g) => g,
            Body::Discriminator(d) => d,
        }
    }

    fn module_mut(&mut self) -> &mut dyn Module {
        match &mut self.body {
            Body::Generator(g) => g,
            Body::Discriminator(d) => d,
        }
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.module().visit_params("", f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.module_mut().visit_params_mut("", f);
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    /// All persistent tensors (parameters, then normalization buffers) by name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.module().visit_params("", &mut |n, p| out.push((String::from(n), p.value.clone())));
        self.module().visit_buffers("", &mut |n, t| out.push((String::from(n), t.clone())));
        out
    }

    /// Overwrites every persistent tensor from `tensors`, which must name
    /// each of them exactly once with the expected shape.
    pub fn load_tensors(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let expected = self.named_tensors();
        if expected.len() != tensors.len() {
            bail!(
                ShapeMismatch,
                "expected {} tensors for a {} network, got {}",
                expected.len(),
                self.spec.role.name(),
                tensors.len()
            );
        }
        let lookup = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        for (name, t) in &expected {
            match lookup(name) {
                Some(v) if v.shape() == t.shape() => {}
                Some(v) => bail!(ShapeMismatch, "{name}: expected {:?}, got {:?}", t.shape(), v.shape()),
                None => bail!(ShapeMismatch, "missing tensor {name}"),
            }
        }
        self.module_mut().visit_params_mut("", &mut |n, p| {
            p.value = lookup(n).expect("checked above").clone();
        });
        self.module_mut().visit_buffers_mut("", &mut |n, b| {
            *b = lookup(n).expect("checked above").clone();
        });
        Ok(())
    }

    /// Backpropagates `grad` (shaped like the last forward output) and
    /// returns the gradient with respect to that forward's input. Parameter
    /// gradients accumulate.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match &mut self.body {
            Body::Discriminator(d) => d.backward(grad),
            Body::Generator(g) => {
                let gin = g.backward(grad)?;
                match g.noise.as_mut() {
                    Some(noise) => {
                        let (g_mask, g_noise) = gin.split_channels(1);
                        noise.backward(&g_noise)?;
                        Ok(g_mask)
                    }
                    None => Ok(gin),
                }
            }
        }
    }

    fn check_input(&self, t: &Tensor, channels: usize, what: &str) -> Result<usize> {
        let (n, c, h, w) = t.expect_rank4(what)?;
        let s = self.spec.input_size;
        if c != channels || h != s || w != s || n == 0 {
            bail!(
                ShapeMismatch,
                "{what}: expected (N>0, {channels}, {s}, {s}), got {:?}",
                t.shape()
            );
        }
        Ok(n)
    }

    fn expect_role(&self, role: Role) -> Result<()> {
        if self.spec.role != role {
            bail!(Mode, "operation needs a {} network, got {}", role.name(), self.spec.role.name());
        }
        Ok(())
    }
}

/// Noise channel for each code: the affine projection of `z` onto a 32×32
/// grid, bilinearly resized to `size × size`. Output shape `N×1×size×size`.
pub fn inject_noise(state: &mut NetworkState, z: &[NoiseCode], size: usize) -> Result<Tensor> {
    state.expect_role(Role::Synthesis)?;
    match &mut state.body {
        Body::Generator(Generator { noise: Some(p), .. }) => p.project(z, size, Phase::Inference),
        _ => bail!(Mode, "network has no noise projection"),
    }
}

/// Synthesizes images `N×3×S×S` in `[-1, 1]` from masks `N×1×S×S` encoded
/// as −1 (background) / +1 (vessel) and one noise code per mask.
pub fn generator_forward(
    state: &mut NetworkState,
    y: &Tensor,
    z: &[NoiseCode],
    phase: Phase,
) -> Result<Tensor> {
    state.expect_role(Role::Synthesis)?;
    let n = state.check_input(y, 1, "generator mask")?;
    if z.len() != n {
        bail!(ShapeMismatch, "{} noise codes for a batch of {n}", z.len());
    }
    let size = state.spec.input_size;
    match &mut state.body {
        Body::Generator(g) => {
            let proj = g.noise.as_mut().expect("synthesis generator has a noise projection");
            let noise = proj.project(z, size, phase)?;
            let input = Tensor::concat_channels(y, &noise)?;
            g.forward(&input, phase)
        }
        Body::Discriminator(_) => unreachable!("role checked"),
    }
}

/// Vessel probability map `N×1×S×S` in `(0, 1)` for images `N×3×S×S`.
pub fn segmentor_forward(state: &mut NetworkState, x: &Tensor, phase: Phase) -> Result<Tensor> {
    state.expect_role(Role::Segmentor)?;
    state.check_input(x, 3, "segmentor image")?;
    match &mut state.body {
        Body::Generator(g) => g.forward(x, phase),
        Body::Discriminator(_) => unreachable!("role checked"),
    }
}

/// Probability `N×1` that each (image, mask) pair is real. `y` uses the
/// same −1/+1 encoding as the generator input.
pub fn discriminator_forward(
    state: &mut NetworkState,
    x: &Tensor,
    y: &Tensor,
    phase: Phase,
) -> Result<Tensor> {
    state.expect_role(Role::Discriminator)?;
    let n = state.check_input(x, 3, "discriminator image")?;
    if state.check_input(y, 1, "discriminator mask")? != n {
        bail!(ShapeMismatch, "image and mask batch sizes differ");
    }
    let input = Tensor::concat_channels(x, y)?;
    match &mut state.body {
        Body::Discriminator(d) => d.forward(&input, phase),
        Body::Generator(_) => unreachable!("role checked"),
    }
}
