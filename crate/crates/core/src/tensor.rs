//! Dense row-major `f64` tensors. Image batches use NCHW layout.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            bail!(
                ShapeMismatch,
                "shape {:?} needs {} elements, got {}",
                shape,
                len,
                data.len()
            );
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    ///
    /// Panics if the tensor is not rank 4; callers validate shapes at the
    /// public boundary.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected NCHW tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn expect_rank4(&self, what: &str) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            bail!(ShapeMismatch, "{what}: expected NCHW tensor, got {:?}", self.shape);
        }
        Ok(self.dims4())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            bail!(
                ShapeMismatch,
                "cannot reshape {:?} into {:?}",
                self.shape,
                shape
            );
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Adds `s * other` in place.
    pub fn axpy(&mut self, s: f64, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Sample `i` of a batch as an owned `1×C×H×W` tensor.
    pub fn batch_item(&self, i: usize) -> Tensor {
        let (_, c, h, w) = self.dims4();
        let plane = c * h * w;
        Tensor {
            shape: vec![1, c, h, w],
            data: self.data[i * plane..(i + 1) * plane].to_vec(),
        }
    }

    /// Stacks `1×C×H×W` (or `C×H×W`) tensors into one batch.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = match items.first() {
            Some(t) => t,
            None => bail!(ShapeMismatch, "cannot stack an empty list"),
        };
        let inner: Vec<usize> = match first.shape.len() {
            4 if first.shape[0] == 1 => first.shape[1..].to_vec(),
            3 => first.shape.clone(),
            _ => bail!(ShapeMismatch, "cannot stack tensors of shape {:?}", first.shape),
        };
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.len() != first.len() {
                bail!(ShapeMismatch, "stack: {:?} vs {:?}", t.shape, first.shape);
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Tensor::from_vec(&shape, data)
    }

    /// Channel-wise concatenation of two NCHW tensors.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (na, ca, ha, wa) = a.expect_rank4("concat")?;
        let (nb, cb, hb, wb) = b.expect_rank4("concat")?;
        if na != nb || ha != hb || wa != wb {
            bail!(ShapeMismatch, "concat: {:?} vs {:?}", a.shape, b.shape);
        }
        let plane = ha * wa;
        let mut data = Vec::with_capacity(a.len() + b.len());
        for n in 0..na {
            data.extend_from_slice(&a.data[n * ca * plane..(n + 1) * ca * plane]);
            data.extend_from_slice(&b.data[n * cb * plane..(n + 1) * cb * plane]);
        }
        Tensor::from_vec(&[na, ca + cb, ha, wa], data)
    }

    /// Inverse of [`Tensor::concat_channels`]: splits off the first `c1` channels.
    pub fn split_channels(&self, c1: usize) -> (Tensor, Tensor) {
        let (n, c, h, w) = self.dims4();
        assert!(c1 <= c);
        let c2 = c - c1;
        let plane = h * w;
        let mut a = Vec::with_capacity(n * c1 * plane);
        let mut b = Vec::with_capacity(n * c2 * plane);
        for i in 0..n {
            let base = i * c * plane;
            a.extend_from_slice(&self.data[base..base + c1 * plane]);
            b.extend_from_slice(&self.data[base + c1 * plane..base + c * plane]);
        }
        (
            Tensor {
                shape: vec![n, c1, h, w],
                data: a,
            },
            Tensor {
                shape: vec![n, c2, h, w],
                data: b,
            },
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
