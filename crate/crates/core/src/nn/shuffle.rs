use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Depth-to-space: `(N, C, H, W) -> (N, C/r², rH, rW)` with
/// `out[n, c, r*h + i, r*w + j] = in[n, c*r² + i*r + j, h, w]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || s.c() % (r * r) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{} channels not divisible by {}", s.c(), r * r),
        ));
    }
    let out_shape = Shape::new(s.n(), s.c() / (r * r), s.h() * r, s.w() * r);
    let mut out = vec![T::zero(); s.len()];
    let src = x.data();
    for n in 0..s.n() {
        for c in 0..out_shape.c() {
            for i in 0..r {
                for j in 0..r {
                    let ic = c * r * r + i * r + j;
                    for h in 0..s.h() {
                        let srow = &src[s.index(n, ic, h, 0)..][..s.w()];
                        let base = out_shape.index(n, c, r * h + i, j);
                        for (w, &v) in srow.iter().enumerate() {
                            out[base + r * w] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Space-to-depth, the exact inverse of [`pixel_shuffle`].
pub fn space_to_depth<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || s.h() % r != 0 || s.w() % r != 0 {
        return Err(Error::shape(
            "space_to_depth",
            format!("spatial extent {}x{} not divisible by {r}", s.h(), s.w()),
        ));
    }
    let (ho, wo) = (s.h() / r, s.w() / r);
    let out_shape = Shape::new(s.n(), s.c() * r * r, ho, wo);
    let mut out = vec![T::zero(); s.len()];
    let src = x.data();
    for n in 0..s.n() {
        for c in 0..s.c() {
            for i in 0..r {
                for j in 0..r {
                    let oc = c * r * r + i * r + j;
                    for h in 0..ho {
                        let base = s.index(n, c, r * h + i, j);
                        let drow = &mut out[out_shape.index(n, oc, h, 0)..][..wo];
                        for (w, d) in drow.iter_mut().enumerate() {
                            *d = src[base + r * w];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}
