use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Spatial mean of every feature map, `(N, C, H, W) -> (N, C, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.plane() == 0 {
        return Err(Error::shape("global_avg_pool", format!("empty maps in {s}")));
    }
    let inv = T::one() / T::of(s.plane() as f64);
    let out = x
        .data()
        .chunks(s.plane())
        .map(|m| m.iter().copied().sum::<T>() * inv)
        .collect();
    Ok(Tensor::from_parts(Shape::new(s.n(), s.c(), 1, 1), out))
}

pub fn global_avg_pool_backward<T: Scalar>(input: Shape, grad_out: &[T]) -> Vec<T> {
    let p = input.plane();
    let inv = T::one() / T::of(p as f64);
    grad_out.iter().flat_map(|&g| std::iter::repeat_n(g * inv, p)).collect()
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, for each
/// output element, the flat input index that won (first maximum in `(h, w)`
/// scan order).
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let s = x.shape();
    if s.h() % 2 != 0 || s.w() % 2 != 0 {
        return Err(Error::shape(
            "max_pool2",
            format!("odd spatial extent {}x{}", s.h(), s.w()),
        ));
    }
    let out_shape = Shape::new(s.n(), s.c(), s.h() / 2, s.w() / 2);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut arg = Vec::with_capacity(out_shape.len());
    let d = x.data();
    for n in 0..s.n() {
        for c in 0..s.c() {
            for h in 0..out_shape.h() {
                for w in 0..out_shape.w() {
                    let mut best = s.index(n, c, 2 * h, 2 * w);
                    for (i, j) in [(0, 1), (1, 0), (1, 1)] {
                        let k = s.index(n, c, 2 * h + i, 2 * w + j);
                        if d[k] > d[best] {
                            best = k;
                        }
                    }
                    out.push(d[best]);
                    arg.push(best as u32);
                }
            }
        }
    }
    Ok((Tensor::from_parts(out_shape, out), arg))
}

pub fn max_pool2_backward<T: Scalar>(input: Shape, argmax: &[u32], grad_out: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); input.len()];
    for (&i, &g) in argmax.iter().zip(grad_out) {
        gx[i as usize] += g;
    }
    gx
}

/// Source taps `(i0, i1, w0, w1)` along one axis for output index `o` of a
/// 2x bilinear upsample with half-pixel centres (align-corners = false).
#[inline]
fn taps(o: usize, n: usize) -> (usize, usize, f64, f64) {
    let k = o / 2;
    if o % 2 == 0 {
        // source coordinate k - 0.25
        (k, k.saturating_sub(1), 0.75, 0.25)
    } else {
        // source coordinate k + 0.25
        (k, (k + 1).min(n - 1), 0.75, 0.25)
    }
}

/// Bilinear 2x upsampling, `(N, C, H, W) -> (N, C, 2H, 2W)`, clamping source
/// coordinates at the borders.
pub fn bilinear_up2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.plane() == 0 {
        return Err(Error::shape("bilinear_up2", format!("empty maps in {s}")));
    }
    let out_shape = Shape::new(s.n(), s.c(), 2 * s.h(), 2 * s.w());
    let mut out = vec![T::zero(); out_shape.len()];
    for (src, dst) in x.data().chunks(s.plane()).zip(out.chunks_mut(out_shape.plane())) {
        for oy in 0..out_shape.h() {
            let (y0, y1, wy0, wy1) = taps(oy, s.h());
            for ox in 0..out_shape.w() {
                let (x0, x1, wx0, wx1) = taps(ox, s.w());
                let v = T::of(wy0 * wx0) * src[y0 * s.w() + x0]
                    + T::of(wy0 * wx1) * src[y0 * s.w() + x1]
                    + T::of(wy1 * wx0) * src[y1 * s.w() + x0]
                    + T::of(wy1 * wx1) * src[y1 * s.w() + x1];
                dst[oy * out_shape.w() + ox] = v;
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn bilinear_up2_backward<T: Scalar>(input: Shape, grad_out: &[T]) -> Vec<T> {
    let (h, w) = (input.h(), input.w());
    let (oh, ow) = (2 * h, 2 * w);
    let mut gx = vec![T::zero(); input.len()];
    for (dst, g) in gx.chunks_mut(h * w).zip(grad_out.chunks(oh * ow)) {
        for oy in 0..oh {
            let (y0, y1, wy0, wy1) = taps(oy, h);
            for ox in 0..ow {
                let (x0, x1, wx0, wx1) = taps(ox, w);
                let v = g[oy * ow + ox];
                dst[y0 * w + x0] += T::of(wy0 * wx0) * v;
                dst[y0 * w + x1] += T::of(wy0 * wx1) * v;
                dst[y1 * w + x0] += T::of(wy1 * wx0) * v;
                dst[y1 * w + x1] += T::of(wy1 * wx1) * v;
            }
        }
    }
    gx
}
