//! Dense real tensors, convolution kernels and the reverse-mode tape.
//!
//! Tensors are row-major with the channel axis last, so a feature map is
//! `H×W×C` and a convolution kernel is `K×K×Cin×Cout`. Storage is generic over
//! [`Real`]: training runs in `f32`, gradient checks in `f64`.

mod conv;
mod tape;

pub use conv::{conv2d, conv2d_grad_bias, conv2d_grad_input, conv2d_grad_kernel, conv3d};
pub use tape::{Gradients, Tape, Var};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type usable as tensor storage.
pub trait Real:
    Float + Default + Debug + Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!("extents must be >= 1, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![v; n]).expect("full: invalid shape")
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> F) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(f).collect()).expect("from_fn: invalid shape")
    }

    /// Marks the tensor as a trainable leaf; a tape registers such leaves as
    /// parameters.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> F {
        self.data[0]
    }

    /// Last axis extent.
    pub fn channels(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let mut t = Tensor::new(shape, self.data.clone())?;
        t.requires_grad = self.requires_grad;
        Ok(t)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            requires_grad: false,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: F) -> Self {
        self.map(|v| v * c)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(|v| v.tanh())
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> F {
        self.sum() / F::of(self.data.len() as f64)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), F::max)
    }

    /// Frobenius norm accumulated in `f64`.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::of(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    /// Concatenates rank-3 `H×W×Ci` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let (h, w) = first.spatial()?;
        let mut total = 0;
        for p in parts {
            if p.spatial()? != (h, w) {
                return Err(Error::shape(format!(
                    "concat_channels: spatial extents {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            total += p.channels();
        }
        let mut data = Vec::with_capacity(h * w * total);
        for px in 0..h * w {
            for p in parts {
                let c = p.channels();
                data.extend_from_slice(&p.data[px * c..(px + 1) * c]);
            }
        }
        Tensor::new(&[h, w, total], data)
    }

    /// Channel block `[start, start+len)` of an `H×W×C` tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let (h, w) = self.spatial()?;
        let c = self.channels();
        if len == 0 || start + len > c {
            return Err(Error::shape(format!(
                "channel slice {start}..{} of {c} channels",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(h * w * len);
        for px in 0..h * w {
            data.extend_from_slice(&self.data[px * c + start..px * c + start + len]);
        }
        Tensor::new(&[h, w, len], data)
    }

    pub(crate) fn spatial(&self) -> Result<(usize, usize)> {
        if self.shape.len() != 3 {
            return Err(Error::shape(format!(
                "expected an H×W×C tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<F: Real>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus<F: Real>(v: F) -> F {
    if v > F::of(20.0) {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 20.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Uniform initializer in `±sqrt(1/fan_in)`.
pub fn uniform_init<F: Real, R: rand::Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<F> {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| F::of(rng.random_range(-bound..bound)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f64>::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::new(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        let z = Tensor::<f64>::zeros(&[2, 3, 1]);
        assert!(z.sigmoid().data().iter().all(|&v| v == 0.5));
        assert!(z.tanh().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_keeps_block_order() {
        let a = Tensor::<f64>::from_fn(&[1, 2, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[1, 2, 3], |i| 10.0 + i as f64);
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[1, 2, 5]);
        assert_eq!(c.data(), &[0.0, 1.0, 10.0, 11.0, 12.0, 2.0, 3.0, 13.0, 14.0, 15.0]);
        assert_eq!(c.slice_channels(2, 3).unwrap(), b);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let a = Tensor::<f64>::from_fn(&[3, 3, 2], |i| (i as f64).sin());
        let ones = Tensor::full(&[3, 3, 2], 1.0);
        assert_eq!(a.mul(&ones).unwrap(), a);
        assert!(a.mul(&Tensor::zeros(&[3, 3, 1])).is_err());
    }

    #[test]
    fn softplus_roundtrip() {
        for y in [0.01, 0.1, 1.0, 5.0, 30.0] {
            let x = softplus_inverse(y);
            assert!((softplus(x) - y).abs() < 1e-12);
        }
    }
}
