//! SSIM and MS-SSIM with analytic gradients.
//!
//! Statistics use an 11x11 Gaussian window (sigma 1.5) evaluated only where
//! the window fits entirely inside the image. Each `(batch, channel)` plane is
//! scored independently and the results are averaged.

use crate::error::{Error, Result};
use crate::metrics::losses::{check_pair, LossValue};
use crate::tensor::{Scalar, Tensor};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
/// Dynamic range `L` of the inputs.
pub const DATA_RANGE: f64 = 1.0;
pub const C1: f64 = (0.01 * DATA_RANGE) * (0.01 * DATA_RANGE);
pub const C2: f64 = (0.03 * DATA_RANGE) * (0.03 * DATA_RANGE);
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable valid-mode Gaussian filter over an `h x w` plane.
struct Filter {
    taps: [f64; WINDOW],
    h: usize,
    w: usize,
}

impl Filter {
    fn ho(&self) -> usize {
        self.h - WINDOW + 1
    }
    fn wo(&self) -> usize {
        self.w - WINDOW + 1
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (ho, wo) = (self.ho(), self.wo());
        let mut tmp = vec![0.0; self.h * wo];
        for y in 0..self.h {
            let row = &x[y * self.w..(y + 1) * self.w];
            let out = &mut tmp[y * wo..(y + 1) * wo];
            for (k, &t) in self.taps.iter().enumerate() {
                for (o, &v) in out.iter_mut().zip(&row[k..k + wo]) {
                    *o += t * v;
                }
            }
        }
        let mut out = vec![0.0; ho * wo];
        for i in 0..ho {
            let dst = &mut out[i * wo..(i + 1) * wo];
            for (k, &t) in self.taps.iter().enumerate() {
                for (o, &v) in dst.iter_mut().zip(&tmp[(i + k) * wo..(i + k + 1) * wo]) {
                    *o += t * v;
                }
            }
        }
        out
    }

    /// Adjoint of [`Filter::apply`].
    fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        let (ho, wo) = (self.ho(), self.wo());
        let mut tmp = vec![0.0; self.h * wo];
        for i in 0..ho {
            let src = &g[i * wo..(i + 1) * wo];
            for (k, &t) in self.taps.iter().enumerate() {
                for (d, &v) in tmp[(i + k) * wo..(i + k + 1) * wo].iter_mut().zip(src) {
                    *d += t * v;
                }
            }
        }
        let mut out = vec![0.0; self.h * self.w];
        for y in 0..self.h {
            let src = &tmp[y * wo..(y + 1) * wo];
            let row = &mut out[y * self.w..(y + 1) * self.w];
            for (k, &t) in self.taps.iter().enumerate() {
                for (d, &v) in row[k..k + wo].iter_mut().zip(src) {
                    *d += t * v;
                }
            }
        }
        out
    }
}

/// Mean SSIM and mean contrast-structure term of one plane, with gradients
/// with respect to `x`.
pub(crate) struct PlaneStats {
    pub ssim: f64,
    pub cs: f64,
    pub grad_ssim: Vec<f64>,
    pub grad_cs: Vec<f64>,
}

pub(crate) fn plane_stats(x: &[f64], y: &[f64], h: usize, w: usize, want_grad: bool) -> PlaneStats {
    let f = Filter {
        taps: gaussian_taps(),
        h,
        w,
    };
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = f.apply(x);
    let my = f.apply(y);
    let pxx = f.apply(&sq(x, x));
    let pyy = f.apply(&sq(y, y));
    let pxy = f.apply(&sq(x, y));
    let m = mx.len();
    let inv_m = 1.0 / m as f64;

    let mut ssim = 0.0;
    let mut cs = 0.0;
    // Per-window derivatives of ssim and cs with respect to (mu_x, E[x²], E[xy]).
    let mut ds = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    let mut dc = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for i in 0..m {
        let (a, b) = (mx[i], my[i]);
        let sxx = pxx[i] - a * a;
        let syy = pyy[i] - b * b;
        let sxy = pxy[i] - a * b;
        let n1 = 2.0 * a * b + C1;
        let d1 = a * a + b * b + C1;
        let n2 = 2.0 * sxy + C2;
        let d2 = sxx + syy + C2;
        let l = n1 / d1;
        let c = n2 / d2;
        ssim += l * c;
        cs += c;
        if want_grad {
            let dl_da = (2.0 * b * d1 - n1 * 2.0 * a) / (d1 * d1);
            let dc_dsxx = -n2 / (d2 * d2);
            let dc_dsxy = 2.0 / d2;
            // chain sxx = E[x²] - a², sxy = E[xy] - a b
            let dc_da = dc_dsxx * (-2.0 * a) + dc_dsxy * (-b);
            dc[0][i] = dc_da * inv_m;
            dc[1][i] = dc_dsxx * inv_m;
            dc[2][i] = dc_dsxy * inv_m;
            ds[0][i] = (dl_da * c + l * dc_da) * inv_m;
            ds[1][i] = l * dc_dsxx * inv_m;
            ds[2][i] = l * dc_dsxy * inv_m;
        }
    }
    let to_input = |d: &[Vec<f64>; 3]| -> Vec<f64> {
        let ga = f.adjoint(&d[0]);
        let gxx = f.adjoint(&d[1]);
        let gxy = f.adjoint(&d[2]);
        (0..x.len())
            .map(|k| ga[k] + 2.0 * x[k] * gxx[k] + y[k] * gxy[k])
            .collect()
    };
    let (grad_ssim, grad_cs) = if want_grad {
        (to_input(&ds), to_input(&dc))
    } else {
        (Vec::new(), Vec::new())
    };
    PlaneStats {
        ssim: ssim * inv_m,
        cs: cs * inv_m,
        grad_ssim,
        grad_cs,
    }
}

fn planes<T: Scalar>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    let p = t.shape().plane();
    t.data()
        .chunks(p)
        .map(|c| c.iter().map(|v| v.as_f64()).collect())
        .collect()
}

/// Mean SSIM of `pred` against `target`, differentiable in `pred`.
pub fn ssim<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossValue<T>> {
    check_pair("ssim", pred, target)?;
    let s = pred.shape();
    if s.h() < WINDOW || s.w() < WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("image {}x{} smaller than the {WINDOW}x{WINDOW} window", s.h(), s.w()),
        ));
    }
    let (xs, ys) = (planes(pred), planes(target));
    let np = xs.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (x, y) in xs.iter().zip(&ys) {
        let st = plane_stats(x, y, s.h(), s.w(), true);
        value += st.ssim / np;
        grad.extend(st.grad_ssim.iter().map(|g| T::of(g / np)));
    }
    Ok(LossValue {
        value,
        grad: Tensor::from_parts(s, grad),
    })
}

/// Number of MS-SSIM scales usable for an `h x w` image.
pub fn ms_ssim_levels(h: usize, w: usize) -> usize {
    let m = h.min(w);
    (1..=MS_SSIM_WEIGHTS.len())
        .take_while(|&l| m >= WINDOW << (l - 1))
        .last()
        .unwrap_or(0)
}

/// 2x2 mean pooling; an odd trailing row or column is dropped.
pub(crate) fn avg_pool2(x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(ho * wo);
    for i in 0..ho {
        for j in 0..wo {
            let a = x[2 * i * w + 2 * j] + x[2 * i * w + 2 * j + 1];
            let b = x[(2 * i + 1) * w + 2 * j] + x[(2 * i + 1) * w + 2 * j + 1];
            out.push(0.25 * (a + b));
        }
    }
    (out, ho, wo)
}

fn avg_pool2_adjoint(g: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; h * w];
    for i in 0..ho {
        for j in 0..wo {
            let v = 0.25 * g[i * wo + j];
            out[2 * i * w + 2 * j] += v;
            out[2 * i * w + 2 * j + 1] += v;
            out[(2 * i + 1) * w + 2 * j] += v;
            out[(2 * i + 1) * w + 2 * j + 1] += v;
        }
    }
    out
}

fn ms_ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, levels: usize) -> (f64, Vec<f64>) {
    let wsum: f64 = MS_SSIM_WEIGHTS[..levels].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..levels].iter().map(|v| v / wsum).collect();

    let mut dims = vec![(h, w)];
    let mut xs = vec![x.to_vec()];
    let mut ys = vec![y.to_vec()];
    for _ in 1..levels {
        let (ph, pw) = *dims.last().unwrap();
        let (px, nh, nw) = avg_pool2(xs.last().unwrap(), ph, pw);
        let (py, _, _) = avg_pool2(ys.last().unwrap(), ph, pw);
        xs.push(px);
        ys.push(py);
        dims.push((nh, nw));
    }
    let stats: Vec<PlaneStats> = (0..levels)
        .map(|j| plane_stats(&xs[j], &ys[j], dims[j].0, dims[j].1, true))
        .collect();
    if levels == 1 {
        return (stats[0].ssim, stats[0].grad_ssim.clone());
    }
    // Coarsest scale contributes full SSIM, finer scales contrast-structure.
    let term = |j: usize| {
        if j + 1 == levels {
            stats[j].ssim
        } else {
            stats[j].cs
        }
    };
    let terms: Vec<f64> = (0..levels).map(|j| term(j).max(0.0)).collect();
    let value: f64 = terms.iter().zip(&weights).map(|(t, wt)| t.powf(*wt)).product();
    if value <= 0.0 {
        return (0.0, vec![0.0; h * w]);
    }
    let mut g: Vec<f64> = Vec::new();
    for j in (0..levels).rev() {
        let coeff = value * weights[j] / terms[j];
        let local = if j + 1 == levels {
            &stats[j].grad_ssim
        } else {
            &stats[j].grad_cs
        };
        let mut here: Vec<f64> = local.iter().map(|v| coeff * v).collect();
        if !g.is_empty() {
            let up = avg_pool2_adjoint(&g, dims[j].0, dims[j].1);
            here.iter_mut().zip(up).for_each(|(a, b)| *a += b);
        }
        g = here;
    }
    (value, g)
}

/// Multi-scale SSIM. Uses up to five scales; smaller images use fewer scales
/// with the leading weights renormalised to sum to one.
pub fn ms_ssim<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossValue<T>> {
    check_pair("ms_ssim", pred, target)?;
    let s = pred.shape();
    let levels = ms_ssim_levels(s.h(), s.w());
    if levels == 0 {
        return Err(Error::shape(
            "ms_ssim",
            format!("image {}x{} smaller than the {WINDOW}x{WINDOW} window", s.h(), s.w()),
        ));
    }
    let (xs, ys) = (planes(pred), planes(target));
    let np = xs.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (x, y) in xs.iter().zip(&ys) {
        let (v, g) = ms_ssim_plane(x, y, s.h(), s.w(), levels);
        value += v / np;
        grad.extend(g.iter().map(|g| T::of(g / np)));
    }
    Ok(LossValue {
        value,
        grad: Tensor::from_parts(s, grad),
    })
}
