//! Shared helpers: central finite differences in f64 and straight-line
//! reference implementations.

#![allow(dead_code)]

use ispnet::metrics::LossValue;
use ispnet::nn::{Activation, ConvSpec, Padding};
use ispnet::raw_pipeline::{RgbImage, UnprocessConfig};
use ispnet::tensor::rng_stream;
use ispnet::{ModelGraph, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;

/// `||a - n|| / max(||a||, ||n||)`, or 0 when both vanish.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn project(tape_out: &[f64], r: &[f64]) -> f64 {
    tape_out.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Checks the tape gradient of `sum(r * f(inputs))` for a random `r`
/// against central differences in every input element. Returns the worst
/// relative error over all inputs.
pub fn check_op<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    check_op_with_step(inputs, seed, FD_STEP, f)
}

pub fn check_op_with_step<F>(inputs: &[Tensor<f64>], seed: u64, step: f64, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    let out_shape = tape.value(out).shape();
    let r = Tensor::<f64>::randn(out_shape, seed ^ 0xA5A5).into_data();
    tape.backward(out, r.clone()).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::<f64>::new();
        let vs: Vec<Var> = ins.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let o = f(&mut t, &vs);
        project(t.value(o).data(), &r)
    };
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.len()];
        let mut ins = inputs.to_vec();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let x0 = input.data()[j];
            ins[k].data_mut()[j] = x0 + step;
            let up = eval(&ins);
            ins[k].data_mut()[j] = x0 - step;
            let down = eval(&ins);
            ins[k].data_mut()[j] = x0;
            *slot = (up - down) / (2.0 * step);
        }
        worst = worst.max(rel_err(&analytic[k], &numeric));
    }
    worst
}

/// Checks the gradient that a loss reports for `pred`.
pub fn check_loss<F>(pred: &Tensor<f64>, f: F) -> f64
where
    F: Fn(&Tensor<f64>) -> LossValue<f64>,
{
    let analytic = f(pred).grad.into_data();
    let mut p = pred.clone();
    let numeric: Vec<f64> = (0..pred.len())
        .map(|j| {
            let x0 = pred.data()[j];
            p.data_mut()[j] = x0 + FD_STEP;
            let up = f(&p).value;
            p.data_mut()[j] = x0 - FD_STEP;
            let down = f(&p).value;
            p.data_mut()[j] = x0;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect();
    rel_err(&analytic, &numeric)
}

/// Pushes every entry at least `margin` away from zero, keeping its sign.
pub fn away_from_zero(t: Tensor<f64>, margin: f64) -> Tensor<f64> {
    t.map(|v| if v >= 0.0 { v + margin } else { v - margin })
}

/// Straight-line direct convolution (cross-correlation) with TF-style
/// padding, used as the reference for the im2col/GEMM kernel.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, spec: &ConvSpec) -> Tensor<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let g = spec.groups;
    let (kh, kw) = (ws.h(), ws.w());
    let ekh = dh * (kh - 1) + 1;
    let ekw = dw * (kw - 1) + 1;
    let (oh, ow, pt, pl) = match spec.padding {
        Padding::Same => {
            let oh = xs.h().div_ceil(sh);
            let ow = xs.w().div_ceil(sw);
            let ph = ((oh - 1) * sh + ekh).saturating_sub(xs.h());
            let pw = ((ow - 1) * sw + ekw).saturating_sub(xs.w());
            (oh, ow, ph / 2, pw / 2)
        }
        Padding::Valid => ((xs.h() - ekh) / sh + 1, (xs.w() - ekw) / sw + 1, 0, 0),
    };
    let cout = ws.n();
    let cin_g = ws.c();
    let cout_g = cout / g;
    let mut out = Tensor::<f64>::zeros((xs.n(), cout, oh, ow));
    for n in 0..xs.n() {
        for co in 0..cout {
            let grp = co / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin_g {
                        let cx = grp * cin_g + ci;
                        for ky in 0..kh {
                            let iy = (oy * sh + ky * dh) as isize - pt as isize;
                            if iy < 0 || iy >= xs.h() as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * sw + kx * dw) as isize - pl as isize;
                                if ix < 0 || ix >= xs.w() as isize {
                                    continue;
                                }
                                acc += x.at(n, cx, iy as usize, ix as usize) * w.at(co, ci, ky, kx);
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Direct scatter form of a stride-2 transposed convolution with weight
/// `(in, out, k, k)`, cropped to `2H x 2W` with the same offset a stride-2
/// same-padded convolution would use.
pub fn naive_conv_transposed(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let k = ws.h();
    let (oh, ow) = (2 * xs.h(), 2 * xs.w());
    let pad_h = ((xs.h() - 1) * 2 + k).saturating_sub(oh) / 2;
    let pad_w = ((xs.w() - 1) * 2 + k).saturating_sub(ow) / 2;
    let mut out = Tensor::<f64>::zeros((xs.n(), ws.c(), oh, ow));
    for n in 0..xs.n() {
        for co in 0..ws.c() {
            for y in 0..oh {
                for xo in 0..ow {
                    out.set(n, co, y, xo, b.map_or(0.0, |b| b.data()[co]));
                }
            }
        }
        for ci in 0..xs.c() {
            for iy in 0..xs.h() {
                for ix in 0..xs.w() {
                    let v = x.at(n, ci, iy, ix);
                    for co in 0..ws.c() {
                        for ky in 0..k {
                            let y = (2 * iy + ky) as isize - pad_h as isize;
                            if y < 0 || y >= oh as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let xo = (2 * ix + kx) as isize - pad_w as isize;
                                if xo < 0 || xo >= ow as isize {
                                    continue;
                                }
                                let (y, xo) = (y as usize, xo as usize);
                                let cur = out.at(n, co, y, xo);
                                out.set(n, co, y, xo, cur + v * w.at(ci, co, ky, kx));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// SSIM of one plane by explicit 11x11 window sums at every valid position.
pub fn direct_ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> (f64, f64) {
    let n = 11;
    let raw: Vec<f64> = (0..n).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let total: f64 = raw.iter().sum();
    let g: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let (c1, c2) = (1e-4, 9e-4);
    let (mut s_sum, mut cs_sum, mut count) = (0.0, 0.0, 0.0);
    for oy in 0..=h - n {
        for ox in 0..=w - n {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let wt = g[i] * g[j];
                    let a = x[(oy + i) * w + ox + j];
                    let b = y[(oy + i) * w + ox + j];
                    mx += wt * a;
                    my += wt * b;
                    xx += wt * a * a;
                    yy += wt * b * b;
                    xy += wt * a * b;
                }
            }
            let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
            let cs = (2.0 * cxy + c2) / (vx + vy + c2);
            let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            s_sum += l * cs;
            cs_sum += cs;
            count += 1.0;
        }
    }
    (s_sum / count, cs_sum / count)
}

/// One textbook Adam step on a scalar with default moments.
pub fn adam_reference_step(q: &mut f64, m: &mut f64, v: &mut f64, grad: f64, t: u64, lr: f64) {
    *m = 0.9 * *m + 0.1 * grad;
    *v = 0.999 * *v + 0.001 * grad * grad;
    let mhat = *m / (1.0 - 0.9f64.powi(t as i32));
    let vhat = *v / (1.0 - 0.999f64.powi(t as i32));
    *q -= lr * mhat / (vhat.sqrt() + 1e-8);
}

pub fn correlated_pair(shape: (usize, usize, usize, usize), seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let a = Tensor::<f64>::uniform(shape, 0.0, 1.0, seed);
    let n = Tensor::<f64>::randn(shape, seed + 1);
    let data = a
        .data()
        .iter()
        .zip(n.data())
        .map(|(x, z)| (x + 0.1 * z).clamp(0.0, 1.0))
        .collect();
    (a.clone(), Tensor::from_vec(shape, data).unwrap())
}

pub fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> [f64; 3] {
    // Gaussian elimination with partial pivoting.
    let mut a = [[0.0; 4]; 3];
    for r in 0..3 {
        a[r][..3].copy_from_slice(&m[r]);
        a[r][3] = rhs[r];
    }
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..4 {
                    a[r][k] -= f * a[col][k];
                }
            }
        }
    }
    [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]]
}

pub fn random_config(seed: u64) -> UnprocessConfig {
    let mut rng = rng_stream(seed, 99);
    let mut ccm = [[0.0; 3]; 3];
    for (r, row) in ccm.iter_mut().enumerate() {
        let diag: f64 = rng.random_range(1.2..2.0);
        let split: f64 = rng.random_range(0.2..0.8);
        let off = 1.0 - diag;
        row[r] = diag;
        row[(r + 1) % 3] = off * split;
        row[(r + 2) % 3] = off * (1.0 - split);
    }
    UnprocessConfig {
        ccm,
        wb_gains: (rng.random_range(1.0..2.5), rng.random_range(1.0..2.5)),
        noise_read: rng.random_range(1e-6..1e-4),
        noise_shot: rng.random_range(1e-4..1e-2),
        seed,
    }
}

pub fn oracle_unprocess(rgb: &RgbImage, cfg: &UnprocessConfig) -> Vec<u16> {
    let decode = |c: u8| {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let mut rng = rng_stream(cfg.seed, 0);
    let mut out = Vec::new();
    for y in 0..rgb.height() {
        for x in 0..rgb.width() {
            let p = rgb.pixel(y, x);
            // Camera RGB is the solution of ccm * cam = linear.
            let cam = solve3(cfg.ccm, [decode(p[0]), decode(p[1]), decode(p[2])]);
            let v = match (y % 2, x % 2) {
                (0, 0) => cam[0] / cfg.wb_gains.0,
                (1, 1) => cam[2] / cfg.wb_gains.1,
                _ => cam[1],
            };
            let z: f64 = rng.sample(StandardNormal);
            let sd = (cfg.noise_read + cfg.noise_shot * v.max(0.0)).sqrt();
            out.push(((v + sd * z).clamp(0.0, 1.0) * 1023.0).round() as u16);
        }
    }
    out
}

/// `(team, psnr dB, runtime ms, printed score)`.
pub const LEADERBOARD: [(&str, f64, f64, f64); 10] = [
    ("dh_isp", 23.2, 61.0, 25.98),
    ("AIISP", 23.73, 90.8, 25.91),
    ("Tuned U-Net", 23.30, 78.0, 25.74),
    ("ENERZAi", 22.97, 65.0, 25.67),
    ("isp_forever", 22.78, 77.0, 25.24),
    ("NOAHTCV", 23.08, 94.5, 25.19),
    ("ACVLab", 22.03, 76.3, 24.5),
    ("CVML", 22.84, 167.0, 23.5),
    ("ENERZAi*", 23.41, 231.0, 23.39),
    ("EdS", 23.23, 1861.0, 22.4),
];

/// Smallest `|pre-activation|` over every ReLU in `model` for input `x`.
pub fn relu_margin(model: &ModelGraph, x: &Tensor<f64>) -> f64 {
    let mut tape = Tape::<f64>::new();
    let params = model.params_on_tape(&mut tape, false);
    let xv = tape.leaf(x.clone(), false);
    let trace = model.forward_tape_trace(&mut tape, xv, &params).unwrap();
    model
        .layers()
        .iter()
        .zip(&trace)
        .filter(|(l, _)| l.kind.activation() == Some(Activation::Relu))
        .flat_map(|(_, &(pre, _))| tape.value(pre).data().to_vec())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// `(seed, rel err)` of the end-to-end check on the first `SEEDS` inputs
/// whose ReLU pre-activations all stay at least 1e-3 from the kink.
pub fn model_errors(model: &ModelGraph, input: (usize, usize, usize, usize)) -> Vec<(u64, f64)> {
    let params: Vec<Tensor<f64>> = model.params().iter().map(|(_, p)| p.cast()).collect();
    let mut out = Vec::new();
    for seed in 0..100 * SEEDS {
        let x = Tensor::<f64>::uniform(input, 0.0, 1.0, seed);
        if relu_margin(model, &x) < 1e-3 {
            continue;
        }
        let mut ins = vec![x];
        ins.extend(params.iter().cloned());
        out.push((
            seed,
            check_op(&ins, seed, |t: &mut Tape<f64>, v| {
                model.forward_tape(t, v[0], &v[1..]).unwrap()
            }),
        ));
        if out.len() == SEEDS as usize {
            break;
        }
    }
    out
}
