//! Dense row-major tensors and the differentiable primitives the network is
//! built from. Every primitive has a hand-written backward pass; there is no
//! autograd graph.

mod activation;
mod bundle;
mod channels;
mod conv;
pub mod gradcheck;
mod norm;
mod params;
mod pool;
pub mod rten;

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use activation::{relu, relu_backward, softmax, softmax_backward};
pub use bundle::GradBundle;
pub use channels::{channel_concat, channel_split};
pub use conv::{conv2d, conv2d_backward, conv2d_direct, conv2d_im2col, ConvParams};
pub use norm::{batchnorm, batchnorm_backward, BatchNormCache, BatchNormParams, Mode};
pub use params::{join, ParamKind, Parameters};
pub use pool::{avg_pool3x3, avg_pool3x3_backward, global_avg_pool, global_avg_pool_backward};

/// Element type on disk, matching the RTEN dtype byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

/// Floating-point element type. Training runs in `f32`; gradient checks
/// run in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    const DTYPE: DType;
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview = &self.data[..self.data.len().min(8)];
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("data", &preview)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Format(format!("zero extent in dims {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape("Tensor::new", dims, &[data.len()]));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "zero extent in {dims:?}");
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    /// Zero-mean Gaussian entries with the given standard deviation.
    pub fn randn(dims: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(dims, |_| {
            let z: f64 = rng.sample(StandardNormal);
            T::lit(z * std)
        })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform(dims: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(dims, |_| T::lit(rng.random_range(lo..hi)))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.dims, dims));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    /// Splits an `[N, C, H, W]` tensor's dims into a tuple.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape("nchw", &self.dims, &[0, 0, 0, 0])),
        }
    }

    pub fn same_dims(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(op, &self.dims, &other.dims));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_dims(other, "add")?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_dims(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.same_dims(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|v| v * alpha)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.same_dims(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Element-wise conversion between precisions.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Row `i` of the leading axis as a new tensor with the remaining dims.
    pub fn index_outer(&self, i: usize) -> Result<Self> {
        let n = self.dims[0];
        if i >= n {
            return Err(Error::OutOfRange {
                what: "leading axis",
                index: i,
                len: n,
            });
        }
        let inner: usize = self.dims[1..].iter().product();
        let dims = if self.dims.len() == 1 {
            vec![1]
        } else {
            self.dims[1..].to_vec()
        };
        Ok(Self {
            dims,
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Format("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.same_dims(t, "stack")?;
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        Ok(Self { dims, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f32>::new(&[2, 3], vec![0.0; 5]),
            Err(Error::Shape { .. })
        ));
        assert!(Tensor::<f32>::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn stack_and_index_are_inverse() {
        let a = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 3], |i| -(i as f64));
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.dims(), &[2, 2, 3]);
        assert_eq!(s.index_outer(0).unwrap(), a);
        assert_eq!(s.index_outer(1).unwrap(), b);
        assert!(s.index_outer(2).is_err());
    }

    #[test]
    fn cast_round_trips_representable_values() {
        let t = Tensor::<f32>::from_fn(&[5], |i| i as f32 * 0.25);
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t, back);
    }
}
