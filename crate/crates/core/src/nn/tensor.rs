//! A minimal NCHW tensor over `f32` (default) or `f64`.
//!
//! Kernels are generic over [`Scalar`] so gradient checks can run the exact
//! same code in `f64`, where central differences are trustworthy, while
//! training and inference stay in `f32`.

use crate::error::{Error, Result};

/// Element types the kernels accept.
pub trait Scalar:
    num_traits::Float
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense batch-major tensor: dims `(N, C, H, W)`, row-major with `W`
/// innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        assert!(n >= 1 && c >= 1 && h >= 1 && w >= 1, "dims must be >= 1");
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::shape(
                "Tensor4::from_vec",
                format!("{} elements for ({n},{c},{h},{w})", n * c * h * w),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && h < self.h && w < self.w);
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.idx(n, c, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut T {
        let i = self.idx(n, c, h, w);
        &mut self.data[i]
    }

    /// Contiguous `(C, H, W)` slice of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.c * self.h * self.w;
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.c * self.h * self.w;
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn same_dims(&self, other: &Tensor4<T>) -> bool {
        self.dims() == other.dims()
    }

    /// Elementwise `self += other`; dims must match.
    pub fn accumulate(&mut self, other: &Tensor4<T>) {
        debug_assert!(self.same_dims(other));
        for (d, &s) in self.data.iter_mut().zip(&other.data) {
            *d = *d + s;
        }
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor4<T> {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Convert element type (used to run gradient checks in `f64`).
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}
