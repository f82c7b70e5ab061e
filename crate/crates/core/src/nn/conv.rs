//! 2-D convolution and its transpose.
//!
//! Both directions are lowered to GEMM over im2col buffers built for a band of
//! output rows at a time, so the scratch memory stays bounded even for Full HD
//! inputs. Every output element is produced by exactly one GEMM call with a
//! fixed reduction order, and cross-batch reductions (weight and bias
//! gradients) are summed in batch order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Target number of elements in one im2col band.
const BAND_ELEMS: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero fill, output extent `ceil(input / stride)`.
    Same,
    /// No padding.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
    pub padding: Padding,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: (1, 1),
            dilation: (1, 1),
            groups: 1,
            padding: Padding::Same,
        }
    }
}

impl ConvSpec {
    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }
    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }
    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }
    pub fn padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }
}

/// Convolution weights, bias and hyperparameters.
///
/// `weight` is `(out_channels, in_channels / groups, kh, kw)` and `bias` is
/// `(1, out_channels, 1, 1)`.
#[derive(Clone, Debug)]
pub struct Conv2dParams<T: Scalar = f32> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2dParams<T> {
    /// Zero-initialised parameters.
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: (usize, usize), spec: ConvSpec) -> Result<Self> {
        check_channels(in_channels, out_channels, spec.groups)?;
        Ok(Conv2dParams {
            spec,
            weight: Tensor::zeros((out_channels, in_channels / spec.groups, kernel.0, kernel.1)),
            bias: Tensor::zeros((1, out_channels, 1, 1)),
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n()
    }
    pub fn in_channels(&self) -> usize {
        self.weight.shape().c() * self.spec.groups
    }
    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape().h(), self.weight.shape().w())
    }
}

fn check_channels(cin: usize, cout: usize, groups: usize) -> Result<()> {
    if cin == 0 || cout == 0 || groups == 0 {
        return Err(Error::invalid("convolution channels and groups must be positive"));
    }
    if cin % groups != 0 || cout % groups != 0 {
        return Err(Error::invalid(format!(
            "channels {cin}->{cout} not divisible by groups {groups}"
        )));
    }
    Ok(())
}

/// Fully resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub dh: usize,
    pub dw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub ho: usize,
    pub wo: usize,
}

fn out_extent(op: &'static str, size: usize, k: usize, s: usize, d: usize, padding: Padding) -> Result<(usize, usize)> {
    let span = d * (k - 1) + 1;
    match padding {
        Padding::Same => {
            let out = size.div_ceil(s);
            let total = ((out - 1) * s + span).saturating_sub(size);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if size < span {
                return Err(Error::shape(
                    op,
                    format!("kernel extent {span} larger than input extent {size}"),
                ));
            }
            Ok(((size - span) / s + 1, 0))
        }
    }
}

impl ConvGeometry {
    pub fn new(input: Shape, weight: Shape, spec: &ConvSpec) -> Result<Self> {
        let op = "conv2d";
        let groups = spec.groups;
        let cout = weight.n();
        let cin = weight.c() * groups;
        check_channels(cin, cout, groups)?;
        if input.c() != cin {
            return Err(Error::shape(
                op,
                format!(
                    "input {input} has {} channels, weight {weight} expects {cin}",
                    input.c()
                ),
            ));
        }
        let (kh, kw) = (weight.h(), weight.w());
        let (sh, sw) = spec.stride;
        let (dh, dw) = spec.dilation;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || dh == 0 || dw == 0 {
            return Err(Error::invalid("kernel, stride and dilation must be positive"));
        }
        if input.h() == 0 || input.w() == 0 {
            return Err(Error::shape(op, format!("empty spatial extent in {input}")));
        }
        let (ho, pad_top) = out_extent(op, input.h(), kh, sh, dh, spec.padding)?;
        let (wo, pad_left) = out_extent(op, input.w(), kw, sw, dw, spec.padding)?;
        Ok(ConvGeometry {
            n: input.n(),
            cin,
            cout,
            groups,
            h: input.h(),
            w: input.w(),
            kh,
            kw,
            sh,
            sw,
            dh,
            dw,
            pad_top,
            pad_left,
            ho,
            wo,
        })
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.n, self.cin, self.h, self.w)
    }
    pub fn output_shape(&self) -> Shape {
        Shape::new(self.n, self.cout, self.ho, self.wo)
    }
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    /// Rows of the im2col matrix for one group.
    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn band_rows(&self) -> usize {
        (BAND_ELEMS / (self.k() * self.wo).max(1)).clamp(1, self.ho)
    }
    fn bands(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.band_rows();
        let ho = self.ho;
        (0..ho).step_by(step).map(move |r0| (r0, (r0 + step).min(ho)))
    }
    /// Valid output-column range for kernel column `kx`, and the input column
    /// of output column 0 (may be negative).
    fn col_range(&self, kx: usize) -> (usize, usize, isize) {
        let off = (kx * self.dw) as isize - self.pad_left as isize;
        let lo = if off >= 0 {
            0
        } else {
            ((-off) as usize).div_ceil(self.sw)
        };
        // largest ox with ox*sw + off <= w-1
        let lim = self.w as isize - 1 - off;
        let hi = if lim < 0 {
            0
        } else {
            (lim as usize / self.sw + 1).min(self.wo)
        };
        (lo, hi.max(lo), off)
    }
    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.sh + ky * self.dh) as isize - self.pad_top as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }

    /// Fills `cols` (K x rows*wo) for batch item `x` (cin x h x w), group `g`.
    fn im2col<T: Scalar>(&self, x: &[T], g: usize, r0: usize, r1: usize, cols: &mut [T]) {
        let p = (r1 - r0) * self.wo;
        let plane = self.h * self.w;
        let mut row = 0;
        for ci in 0..self.cin_g() {
            let src = &x[(g * self.cin_g() + ci) * plane..][..plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let (lo, hi, off) = self.col_range(kx);
                    for oy in r0..r1 {
                        let d = &mut dst[(oy - r0) * self.wo..][..self.wo];
                        match self.input_row(oy, ky) {
                            None => d.fill(T::zero()),
                            Some(iy) => {
                                let srow = &src[iy * self.w..(iy + 1) * self.w];
                                d[..lo].fill(T::zero());
                                d[hi..].fill(T::zero());
                                if self.sw == 1 {
                                    let s0 = (lo as isize + off) as usize;
                                    d[lo..hi].copy_from_slice(&srow[s0..s0 + hi - lo]);
                                } else {
                                    for ox in lo..hi {
                                        d[ox] = srow[(ox as isize * self.sw as isize + off) as usize];
                                    }
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-adds `cols` back into `dx` (cin x h x w); adjoint of `im2col`.
    fn col2im<T: Scalar>(&self, cols: &[T], g: usize, r0: usize, r1: usize, dx: &mut [T]) {
        let p = (r1 - r0) * self.wo;
        let plane = self.h * self.w;
        let mut row = 0;
        for ci in 0..self.cin_g() {
            let dst = &mut dx[(g * self.cin_g() + ci) * plane..][..plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let (lo, hi, off) = self.col_range(kx);
                    for oy in r0..r1 {
                        if let Some(iy) = self.input_row(oy, ky) {
                            let s = &src[(oy - r0) * self.wo..][..self.wo];
                            let drow = &mut dst[iy * self.w..(iy + 1) * self.w];
                            if self.sw == 1 {
                                let d0 = (lo as isize + off) as usize;
                                for (a, &b) in drow[d0..d0 + hi - lo].iter_mut().zip(&s[lo..hi]) {
                                    *a += b;
                                }
                            } else {
                                for ox in lo..hi {
                                    drow[(ox as isize * self.sw as isize + off) as usize] += s[ox];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Safe wrapper over [`Scalar::gemm`] for row-major operands given as
/// `(slice, row_stride, col_stride)`.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: (&[T], usize, usize),
    b: (&[T], usize, usize),
    beta: T,
    c: (&mut [T], usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, a.1, a.2) < a.0.len());
        assert!(last(k, n, b.1, b.2) < b.0.len());
    }
    assert!(last(m, n, c.1, c.2) < c.0.len());
    // SAFETY: bounds asserted above; `c` is a unique borrow so it cannot alias.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.0.as_mut_ptr(),
            c.1 as isize,
            c.2 as isize,
        )
    }
}

/// Raw forward pass: `y = conv(x, w) (+ bias)`.
pub(crate) fn conv_forward_raw<T: Scalar>(geom: &ConvGeometry, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let out_shape = geom.output_shape();
    let in_block = geom.cin * geom.h * geom.w;
    let out_plane = geom.ho * geom.wo;
    let out_block = geom.cout * out_plane;
    let mut y = vec![T::zero(); out_shape.len()];
    let (k, cout_g) = (geom.k(), geom.cout_g());
    y.par_chunks_mut(out_block.max(1))
        .zip(x.par_chunks(in_block.max(1)))
        .for_each(|(yb, xb)| {
            if let Some(bias) = bias {
                for (c, plane) in yb.chunks_mut(out_plane).enumerate() {
                    plane.fill(bias[c]);
                }
            }
            let mut cols = vec![T::zero(); k * geom.band_rows() * geom.wo];
            for (r0, r1) in geom.bands() {
                let p = (r1 - r0) * geom.wo;
                for g in 0..geom.groups {
                    geom.im2col(xb, g, r0, r1, &mut cols[..k * p]);
                    let wg = &w[g * cout_g * k..(g + 1) * cout_g * k];
                    let yg = &mut yb[g * cout_g * out_plane + r0 * geom.wo..];
                    gemm(
                        cout_g,
                        k,
                        p,
                        (wg, k, 1),
                        (&cols[..k * p], p, 1),
                        T::one(),
                        (yg, out_plane, 1),
                    );
                }
            }
        });
    y
}

/// Raw input gradient: the adjoint of [`conv_forward_raw`] without bias.
pub(crate) fn conv_backward_input_raw<T: Scalar>(geom: &ConvGeometry, gy: &[T], w: &[T]) -> Vec<T> {
    let in_block = geom.cin * geom.h * geom.w;
    let out_plane = geom.ho * geom.wo;
    let out_block = geom.cout * out_plane;
    let mut dx = vec![T::zero(); geom.input_shape().len()];
    let (k, cout_g) = (geom.k(), geom.cout_g());
    dx.par_chunks_mut(in_block.max(1))
        .zip(gy.par_chunks(out_block.max(1)))
        .for_each(|(dxb, gyb)| {
            let mut cols = vec![T::zero(); k * geom.band_rows() * geom.wo];
            for (r0, r1) in geom.bands() {
                let p = (r1 - r0) * geom.wo;
                for g in 0..geom.groups {
                    let wg = &w[g * cout_g * k..(g + 1) * cout_g * k];
                    let gyg = &gyb[g * cout_g * out_plane + r0 * geom.wo..];
                    // cols (k x p) = wg^T (k x cout_g) * gy band (cout_g x p)
                    gemm(
                        k,
                        cout_g,
                        p,
                        (wg, 1, k),
                        (gyg, out_plane, 1),
                        T::zero(),
                        (&mut cols[..k * p], p, 1),
                    );
                    geom.col2im(&cols[..k * p], g, r0, r1, dxb);
                }
            }
        });
    dx
}

/// Raw weight and bias gradients.
pub(crate) fn conv_backward_weight_raw<T: Scalar>(geom: &ConvGeometry, x: &[T], gy: &[T]) -> (Vec<T>, Vec<T>) {
    let in_block = geom.cin * geom.h * geom.w;
    let out_plane = geom.ho * geom.wo;
    let out_block = geom.cout * out_plane;
    let (k, cout_g) = (geom.k(), geom.cout_g());
    let wlen = geom.cout * k;
    let partials: Vec<(Vec<T>, Vec<T>)> = x
        .par_chunks(in_block.max(1))
        .zip(gy.par_chunks(out_block.max(1)))
        .map(|(xb, gyb)| {
            let mut dw = vec![T::zero(); wlen];
            let mut cols = vec![T::zero(); k * geom.band_rows() * geom.wo];
            for (r0, r1) in geom.bands() {
                let p = (r1 - r0) * geom.wo;
                for g in 0..geom.groups {
                    geom.im2col(xb, g, r0, r1, &mut cols[..k * p]);
                    let gyg = &gyb[g * cout_g * out_plane + r0 * geom.wo..];
                    let dwg = &mut dw[g * cout_g * k..(g + 1) * cout_g * k];
                    // dw (cout_g x k) += gy band (cout_g x p) * cols^T (p x k)
                    gemm(
                        cout_g,
                        p,
                        k,
                        (gyg, out_plane, 1),
                        (&cols[..k * p], 1, p),
                        T::one(),
                        (dwg, k, 1),
                    );
                }
            }
            let db = gyb
                .chunks(out_plane.max(1))
                .map(|plane| plane.iter().copied().sum())
                .collect();
            (dw, db)
        })
        .collect();
    let mut dw = vec![T::zero(); wlen];
    let mut db = vec![T::zero(); geom.cout];
    for (pw, pb) in partials {
        dw.iter_mut().zip(pw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(pb).for_each(|(a, b)| *a += b);
    }
    (dw, db)
}

fn check_bias<T: Scalar>(bias: &Tensor<T>, cout: usize) -> Result<()> {
    if bias.len() != cout {
        return Err(Error::shape(
            "conv2d",
            format!("bias {} does not hold {cout} channels", bias.shape()),
        ));
    }
    Ok(())
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &Conv2dParams<T>) -> Result<Tensor<T>> {
    conv2d_with(x, &p.weight, Some(&p.bias), &p.spec)
}

pub fn conv2d_with<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let geom = ConvGeometry::new(x.shape(), weight.shape(), spec)?;
    if let Some(b) = bias {
        check_bias(b, geom.cout)?;
    }
    let y = conv_forward_raw(&geom, x.data(), weight.data(), bias.map(|b| b.data()));
    Tensor::from_parts(geom.output_shape(), y).checked("conv2d")
}

/// Gradients of a convolution: `(dx, dw, db)`, each only when requested.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &[T],
    need_input: bool,
    need_params: bool,
) -> Result<ConvGrads<T>> {
    let geom = ConvGeometry::new(x.shape(), weight.shape(), spec)?;
    let input = need_input.then(|| conv_backward_input_raw(&geom, grad_out, weight.data()));
    let (dw, db) = if need_params {
        let (dw, db) = conv_backward_weight_raw(&geom, x.data(), grad_out);
        (Some(dw), Some(db))
    } else {
        (None, None)
    };
    Ok(ConvGrads {
        input,
        weight: dw,
        bias: db,
    })
}

/// Geometry of the strided convolution whose adjoint is the transposed
/// convolution of `x` with `weight` `(in_channels, out_channels, kh, kw)`.
pub fn transposed_geometry(x: Shape, weight: Shape, spec: &ConvSpec) -> Result<ConvGeometry> {
    let op = "conv2d_transposed";
    if spec.stride != (2, 2) {
        return Err(Error::shape(
            op,
            format!("unsupported stride {:?}; only stride 2 is implemented", spec.stride),
        ));
    }
    if spec.groups != 1 || spec.dilation != (1, 1) || spec.padding != Padding::Same {
        return Err(Error::shape(
            op,
            "only ungrouped, undilated same-padded kernels are supported",
        ));
    }
    if x.c() != weight.n() {
        return Err(Error::shape(
            op,
            format!(
                "input {x} has {} channels, weight {weight} expects {}",
                x.c(),
                weight.n()
            ),
        ));
    }
    let conv_input = Shape::new(x.n(), weight.c(), 2 * x.h(), 2 * x.w());
    let geom = ConvGeometry::new(conv_input, weight, spec)?;
    debug_assert_eq!((geom.ho, geom.wo), (x.h(), x.w()));
    Ok(geom)
}

/// Stride-2 transposed convolution, `(N, Cin, H, W) -> (N, Cout, 2H, 2W)`.
///
/// Weights are laid out `(in_channels, out_channels, kh, kw)`; without bias
/// the result is exactly the input gradient of the matching stride-2
/// convolution.
pub fn conv2d_transposed<T: Scalar>(x: &Tensor<T>, p: &Conv2dParams<T>) -> Result<Tensor<T>> {
    conv2d_transposed_with(x, &p.weight, Some(&p.bias), &p.spec)
}

pub fn conv2d_transposed_with<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let geom = transposed_geometry(x.shape(), weight.shape(), spec)?;
    let mut y = conv_backward_input_raw(&geom, x.data(), weight.data());
    if let Some(b) = bias {
        check_bias(b, geom.cin)?;
        let plane = geom.h * geom.w;
        for (i, v) in y.iter_mut().enumerate() {
            *v += b.data()[(i / plane) % geom.cin];
        }
    }
    Tensor::from_parts(geom.input_shape(), y).checked("conv2d_transposed")
}

pub fn conv2d_transposed_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &[T],
    need_input: bool,
    need_params: bool,
) -> Result<ConvGrads<T>> {
    let geom = transposed_geometry(x.shape(), weight.shape(), spec)?;
    let input = need_input.then(|| conv_forward_raw(&geom, grad_out, weight.data(), None));
    let (dw, db) = if need_params {
        // The roles of input and output swap relative to the forward conv.
        let (dw, _) = conv_backward_weight_raw(&geom, grad_out, x.data());
        let plane = geom.h * geom.w;
        let mut db = vec![T::zero(); geom.cin];
        for (i, chunk) in grad_out.chunks(plane).enumerate() {
            db[i % geom.cin] += chunk.iter().copied().sum();
        }
        (Some(dw), Some(db))
    } else {
        (None, None)
    };
    Ok(ConvGrads {
        input,
        weight: dw,
        bias: db,
    })
}
