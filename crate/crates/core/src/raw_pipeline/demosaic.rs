use super::unprocess::{srgb_encode, UnprocessConfig};
use super::{cfa_color, unpack_bayer};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const KERNEL_RB: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];
const KERNEL_G: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]];

/// Mirror index without repeating the edge, which keeps CFA parity.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let i = if i < 0 { -i } else { i };
    (if i >= n { 2 * (n - 1) - i } else { i }) as usize
}

/// Bilinear demosaic of an RGGB mosaic (`h x w`, row major) into three
/// camera-space planes.
pub fn bilinear_demosaic(mosaic: &[f64], h: usize, w: usize) -> [Vec<f64>; 3] {
    assert_eq!(mosaic.len(), h * w);
    let mut out = [vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]];
    for y in 0..h {
        for x in 0..w {
            let site = cfa_color(y, x);
            for (c, plane) in out.iter_mut().enumerate() {
                if c == site {
                    plane[y * w + x] = mosaic[y * w + x];
                    continue;
                }
                let k = if c == 1 { &KERNEL_G } else { &KERNEL_RB };
                let (mut acc, mut norm) = (0.0, 0.0);
                for (dy, row) in k.iter().enumerate() {
                    let yy = reflect(y as isize + dy as isize - 1, h);
                    for (dx, &kv) in row.iter().enumerate() {
                        let xx = reflect(x as isize + dx as isize - 1, w);
                        if kv > 0.0 && cfa_color(yy, xx) == c {
                            acc += kv * mosaic[yy * w + xx];
                            norm += kv;
                        }
                    }
                }
                plane[y * w + x] = if norm > 0.0 { acc / norm } else { 0.0 };
            }
        }
    }
    out
}

/// Fixed reference ISP: bilinear demosaic, then the generator's own white
/// balance, colour matrix and sRGB encoding. It knows the exact colour
/// pipeline but does no denoising.
#[derive(Clone, Copy, Debug)]
pub struct BilinearBaseline {
    pub cfg: UnprocessConfig,
}

impl BilinearBaseline {
    pub fn new(cfg: UnprocessConfig) -> Self {
        BilinearBaseline { cfg }
    }

    /// `(N, 4, h, w)` packed RAW to `(N, 3, 2h, 2w)` sRGB in `[0, 1]`.
    pub fn predict(&self, packed: &Tensor) -> Result<Tensor> {
        let s = packed.shape();
        if s.c() != 4 {
            return Err(Error::shape(
                "bilinear_baseline",
                format!("expected 4 channels, got {s}"),
            ));
        }
        let mosaic = unpack_bayer(packed)?;
        let (h, w) = (2 * s.h(), 2 * s.w());
        let out_shape = Shape::new(s.n(), 3, h, w);
        let mut out = vec![0f32; out_shape.len()];
        let ccm = self.cfg.ccm;
        for n in 0..s.n() {
            let m: Vec<f64> = mosaic.plane(n, 0).iter().map(|&v| v as f64).collect();
            let cam = bilinear_demosaic(&m, h, w);
            for i in 0..h * w {
                let bal = [0, 1, 2].map(|c| cam[c][i] * self.cfg.gain(c));
                for (c, row) in ccm.iter().enumerate() {
                    let lin = row[0] * bal[0] + row[1] * bal[1] + row[2] * bal[2];
                    out[(n * 3 + c) * h * w + i] = srgb_encode(lin.clamp(0.0, 1.0)) as f32;
                }
            }
        }
        Tensor::from_vec(out_shape, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_keeps_parity() {
        assert_eq!(reflect(-1, 6), 1);
        assert_eq!(reflect(6, 6), 4);
        assert_eq!(reflect(3, 6), 3);
    }

    #[test]
    fn constant_mosaic_stays_constant() {
        let m = vec![0.4; 8 * 6];
        for plane in bilinear_demosaic(&m, 6, 8) {
            assert!(plane.iter().all(|&v| (v - 0.4).abs() < 1e-15));
        }
    }

    #[test]
    fn linear_ramp_is_exact_inside() {
        // bilinear interpolation reproduces affine signals away from borders
        let (h, w) = (8, 10);
        let m: Vec<f64> = (0..h * w)
            .map(|i| 0.01 * (i / w) as f64 + 0.02 * (i % w) as f64)
            .collect();
        let out = bilinear_demosaic(&m, h, w);
        for plane in &out {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    assert!((plane[y * w + x] - m[y * w + x]).abs() < 1e-12);
                }
            }
        }
    }
}
