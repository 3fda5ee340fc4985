//! Dense rank-4 tensors in NCHW layout.
//!
//! Everything in the crate is generic over [`Real`], which is implemented for
//! `f32` (training) and `f64` (gradient checking).

mod conv;
mod format;
mod resample;

pub use conv::{conv2d_backward, conv2d_forward, conv_out_size, ConvGrads};
pub use resample::{
    area_downsample, area_downsample_backward, resize_bilinear, resize_bilinear_backward, upsample2x,
};

pub use format::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, DType};

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point element type of a [`Tensor`].
pub trait Real:
    Float + Default + fmt::Debug + fmt::Display + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    const DTYPE: DType;

    fn of(x: f64) -> Self;

    fn to_f64(self) -> f64;

    /// `C = alpha * A * B + beta * C` with arbitrary row/column strides.
    ///
    /// # Safety
    /// Pointers must cover the strided extents of `m x k`, `k x n` and `m x n`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

/// Tensor dimensions `(batch, channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    /// `(1, 1, 1, 1)`, the dims of a scalar loss.
    pub const fn scalar() -> Self {
        Dims::new(1, 1, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_c(self, c: usize) -> Self {
        Dims { c, ..self }
    }

    pub fn with_hw(self, h: usize, w: usize) -> Self {
        Dims { h, w, ..self }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense NCHW tensor, row-major in `(n, c, h, w)` order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor({}, {:?}", self.dims, head)?;
        if self.data.len() > 8 {
            write!(f, " ...")?;
        }
        write!(f, ")")
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(dims: Dims) -> Self {
        Tensor {
            dims,
            data: vec![T::zero(); dims.len()],
        }
    }

    pub fn full(dims: Dims, value: T) -> Self {
        Tensor {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} values for dims {dims}", data.len()),
            ));
        }
        Ok(Tensor { dims, data })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every index.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            dims: Dims::scalar(),
            data: vec![value],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims.c + c) * self.dims.h + y) * self.dims.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Value of a 1x1x1x1 tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    /// Contiguous `(h, w)` plane of one batch item and channel.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of one batch item.
    pub fn item_slice(&self, n: usize) -> &[T] {
        let s = self.dims.c * self.dims.plane();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn item_slice_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.dims.c * self.dims.plane();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn reshape(self, dims: Dims) -> Result<Self> {
        Tensor::from_vec(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::mismatch("zip_map", self.dims, other.dims));
        }
        Ok(Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::mismatch("add_assign", self.dims, other.dims));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.dims != other.dims {
            return Err(Error::mismatch("max_abs_diff", self.dims, other.dims));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Converts the element type (e.g. `f32 -> f64` for gradient checks).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(Real::to_f64(*v))).collect(),
        }
    }

    /// Copies `len` channels starting at `start`.
    pub fn channels(&self, start: usize, len: usize) -> Result<Self> {
        let d = self.dims;
        if start + len > d.c {
            return Err(Error::shape(
                "channels",
                format!("range {start}..{} out of {} channels", start + len, d.c),
            ));
        }
        let p = d.plane();
        let mut out = Vec::with_capacity(d.n * len * p);
        for n in 0..d.n {
            let base = n * d.c * p;
            out.extend_from_slice(&self.data[base + start * p..base + (start + len) * p]);
        }
        Ok(Tensor {
            dims: d.with_c(len),
            data: out,
        })
    }

    /// Copies one batch item as a batch of one.
    pub fn batch_item(&self, n: usize) -> Self {
        Tensor {
            dims: Dims { n: 1, ..self.dims },
            data: self.item_slice(n).to_vec(),
        }
    }

    /// Stacks batch-of-one (or larger) tensors along the batch axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors to stack"))?;
        let per = Dims { n: 0, ..first.dims };
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            if (Dims { n: 0, ..t.dims }) != per {
                return Err(Error::mismatch("stack", first.dims, t.dims));
            }
            data.extend_from_slice(&t.data);
            n += t.dims.n;
        }
        Ok(Tensor {
            dims: Dims { n, ..first.dims },
            data,
        })
    }

    /// Channel concatenation of tensors sharing batch and spatial dims.
    pub fn concat_channels(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let d0 = first.dims;
        let mut c = 0;
        for t in items {
            if t.dims.n != d0.n || t.dims.h != d0.h || t.dims.w != d0.w {
                return Err(Error::mismatch("concat_channels", d0, t.dims));
            }
            c += t.dims.c;
        }
        let mut data = Vec::with_capacity(d0.n * c * d0.plane());
        for n in 0..d0.n {
            for t in items {
                data.extend_from_slice(t.item_slice(n));
            }
        }
        Ok(Tensor {
            dims: d0.with_c(c),
            data,
        })
    }
}
