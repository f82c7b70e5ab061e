//! Dense rank-4 tensors in `(batch, channel, height, width)` layout.
//!
//! Storage is a contiguous row-major buffer; element `(b, c, h, w)` lives at
//! `((b * C + c) * H + h) * W + w`. Every public operation checks that its
//! output is finite and reports [`Error::NonFinite`] otherwise.
//!
//! Random tensors come from the ChaCha8 counter-based generator
//! (`rand_chacha::ChaCha8Rng::seed_from_u64(seed)`), with normal samples drawn
//! by `rand_distr::StandardNormal`. Independent streams for the same seed are
//! selected with [`rng_stream`], so a given `(seed, stream)` pair always
//! reproduces the same sequence.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Floating-point element type. `f32` is the storage type used for models and
/// training; `f64` is used by the finite-difference gradient harness.
pub trait Scalar:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C <- alpha * A B + beta * C` on strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices; `c` must not alias `a` or `b`.
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
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
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
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
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
}

/// Seeded generator for stream `stream` of `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The four extents `(batch, channels, height, width)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }
    pub const fn n(&self) -> usize {
        self.0[0]
    }
    pub const fn c(&self) -> usize {
        self.0[1]
    }
    pub const fn h(&self) -> usize {
        self.0[2]
    }
    pub const fn w(&self) -> usize {
        self.0[3]
    }
    pub const fn plane(&self) -> usize {
        self.0[2] * self.0[3]
    }
    pub const fn len(&self) -> usize {
        self.0[0] * self.0[1] * self.0[2] * self.0[3]
    }
    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.0[1] + c) * self.0[2] + h) * self.0[3] + w
    }

    pub const fn with_c(self, c: usize) -> Self {
        Shape([self.0[0], c, self.0[2], self.0[3]])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n},{c},{h},{w})")
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl From<(usize, usize, usize, usize)> for Shape {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Shape([n, c, h, w])
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
    /// Gradient of some scalar objective with respect to this tensor.
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("grad", &self.grad.is_some())
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.len() {
            return Err(Error::shape(
                "from_vec",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn fill(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Tensor::from_parts(shape, vec![value; shape.len()])
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::fill(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::fill(shape, T::one())
    }

    /// Standard-normal samples from stream 0 of `seed`.
    pub fn randn(shape: impl Into<Shape>, seed: u64) -> Self {
        let shape = shape.into();
        let mut rng = rng_stream(seed, 0);
        let data = (0..shape.len())
            .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Tensor::from_parts(shape, data)
    }

    /// Uniform samples in `[lo, hi)` from stream 0 of `seed`.
    pub fn uniform(shape: impl Into<Shape>, lo: f64, hi: f64, seed: u64) -> Self {
        let shape = shape.into();
        let mut rng = rng_stream(seed, 0);
        let data = (0..shape.len()).map(|_| T::of(rng.random_range(lo..hi))).collect();
        Tensor::from_parts(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(b, c, h, w)]
    }

    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.shape.index(b, c, h, w);
        self.data[i] = v;
    }

    /// The `(h, w)` plane of batch `b`, channel `c`.
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (b * self.shape.c() + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(mut self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_parts(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn checked(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![T::zero(); self.data.len()]);
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) {
        let n = self.data.len();
        let buf = self.grad.get_or_insert_with(|| vec![T::zero(); n]);
        for (a, &b) in buf.iter_mut().zip(g) {
            *a += b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        }
    }
}

fn broadcasts_per_channel(a: Shape, b: Shape) -> bool {
    b.n() == a.n() && b.c() == a.c() && b.h() == 1 && b.w() == 1
}

/// `a op b`, where `b` either matches `a` or is a per-channel `(N, C, 1, 1)`
/// tensor broadcast over the spatial extent.
pub fn elementwise<T: Scalar>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let f = |x: T, y: T| match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
    };
    let out = if a.shape == b.shape {
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
    } else if broadcasts_per_channel(a.shape, b.shape) {
        let p = a.shape.plane();
        let mut out = Vec::with_capacity(a.len());
        for (chunk, &y) in a.data.chunks(p.max(1)).zip(&b.data) {
            out.extend(chunk.iter().map(|&x| f(x, y)));
        }
        out.truncate(a.len());
        out
    } else {
        return Err(Error::ShapeMismatch {
            op: op.name(),
            left: a.shape,
            right: b.shape,
        });
    };
    Tensor::from_parts(a.shape, out).checked(op.name())
}

/// Gradients of `a op b` with respect to both operands given the upstream
/// gradient. Broadcast operands receive the spatially reduced gradient.
pub fn elementwise_backward<T: Scalar>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>, grad_out: &[T]) -> (Vec<T>, Vec<T>) {
    let full = a.shape == b.shape;
    let p = a.shape.plane().max(1);
    let b_at = |i: usize| if full { b.data[i] } else { b.data[i / p] };
    let ga: Vec<T> = match op {
        BinaryOp::Add | BinaryOp::Sub => grad_out.to_vec(),
        BinaryOp::Mul => grad_out.iter().enumerate().map(|(i, &g)| g * b_at(i)).collect(),
    };
    let gb_full = |i: usize, g: T| match op {
        BinaryOp::Add => g,
        BinaryOp::Sub => -g,
        BinaryOp::Mul => g * a.data[i],
    };
    let gb = if full {
        grad_out.iter().enumerate().map(|(i, &g)| gb_full(i, g)).collect()
    } else {
        grad_out
            .chunks(p)
            .enumerate()
            .map(|(ci, chunk)| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(T::zero(), |acc, (j, &g)| acc + gb_full(ci * p + j, g))
            })
            .collect()
    };
    (ga, gb)
}

/// Concatenates along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    let s0 = first.shape;
    let mut channels = 0;
    for p in parts {
        let s = p.shape;
        if s.n() != s0.n() || s.h() != s0.h() || s.w() != s0.w() {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: s0,
                right: s,
            });
        }
        channels += s.c();
    }
    let out_shape = s0.with_c(channels);
    let mut out = Vec::with_capacity(out_shape.len());
    for b in 0..s0.n() {
        for p in parts {
            let block = p.shape.c() * p.shape.plane();
            out.extend_from_slice(&p.data[b * block..(b + 1) * block]);
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Stacks tensors of equal `(C, H, W)` along the batch axis.
pub fn concat_batch<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::shape("concat_batch", "no inputs"))?;
    let s0 = first.shape;
    let mut out = Vec::with_capacity(s0.len() * parts.len());
    let mut n = 0;
    for p in parts {
        let s = p.shape;
        if s.c() != s0.c() || s.h() != s0.h() || s.w() != s0.w() {
            return Err(Error::ShapeMismatch {
                op: "concat_batch",
                left: s0,
                right: s,
            });
        }
        out.extend_from_slice(&p.data);
        n += s.n();
    }
    Ok(Tensor::from_parts(Shape::new(n, s0.c(), s0.h(), s0.w()), out))
}

/// Splits a channel-concatenated buffer back into per-part buffers.
pub fn split_channels<T: Scalar>(data: &[T], shape: Shape, channels: &[usize]) -> Vec<Vec<T>> {
    let p = shape.plane();
    let mut outs: Vec<Vec<T>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(shape.n() * c * p))
        .collect();
    let mut off = 0;
    for _ in 0..shape.n() {
        for (o, &c) in outs.iter_mut().zip(channels) {
            o.extend_from_slice(&data[off..off + c * p]);
            off += c * p;
        }
    }
    outs
}
