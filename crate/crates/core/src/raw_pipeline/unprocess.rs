use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{cfa_color, BayerImage, RgbImage, MAX_CODE};
use crate::error::{Error, Result};
use crate::tensor::rng_stream;

/// Camera-to-linear-sRGB colour matrix, row major.
pub type Ccm = [[f64; 3]; 3];

/// Rows sum to one; diagonal 1.6, off-diagonal -0.3.
pub const DEFAULT_CCM: Ccm = [[1.6, -0.3, -0.3], [-0.3, 1.6, -0.3], [-0.3, -0.3, 1.6]];

pub const RED_GAIN_RANGE: (f64, f64) = (1.5, 2.5);
pub const BLUE_GAIN_RANGE: (f64, f64) = (1.3, 2.0);
/// Read-noise variance range, sampled log-uniformly.
pub const READ_VAR_RANGE: (f64, f64) = (1e-6, 1e-4);
/// Shot-noise gain range, sampled log-uniformly.
pub const SHOT_RANGE: (f64, f64) = (1e-4, 1e-2);

const IDENTITY: Ccm = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Parameters of the inverse ISP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnprocessConfig {
    pub ccm: Ccm,
    /// White-balance gains `(red, blue)`; green is 1.
    pub wb_gains: (f64, f64),
    /// Read-noise variance.
    pub noise_read: f64,
    /// Shot-noise gain: variance grows by `noise_shot * v`.
    pub noise_shot: f64,
    pub seed: u64,
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

impl UnprocessConfig {
    /// Default matrix with gains and noise levels drawn from their ranges.
    pub fn sample(seed: u64) -> Self {
        let mut rng = rng_stream(seed, u64::MAX);
        UnprocessConfig {
            ccm: DEFAULT_CCM,
            wb_gains: (
                rng.random_range(RED_GAIN_RANGE.0..=RED_GAIN_RANGE.1),
                rng.random_range(BLUE_GAIN_RANGE.0..=BLUE_GAIN_RANGE.1),
            ),
            noise_read: log_uniform(&mut rng, READ_VAR_RANGE),
            noise_shot: log_uniform(&mut rng, SHOT_RANGE),
            seed,
        }
    }

    /// Identity matrix, unit gains, no noise.
    pub fn clean(seed: u64) -> Self {
        UnprocessConfig {
            ccm: IDENTITY,
            wb_gains: (1.0, 1.0),
            noise_read: 0.0,
            noise_shot: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ccm.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ccm has non-finite entries"));
        }
        if let Some(r) = self
            .ccm
            .iter()
            .position(|row| (row.iter().sum::<f64>() - 1.0).abs() > 1e-6)
        {
            return Err(Error::invalid(format!("ccm row {r} does not sum to 1")));
        }
        invert3(&self.ccm)?;
        let (r, b) = self.wb_gains;
        if !(r >= 1.0 && b >= 1.0 && r.is_finite() && b.is_finite()) {
            return Err(Error::invalid(format!(
                "white-balance gains must be >= 1, got ({r}, {b})"
            )));
        }
        for (name, v) in [("read", self.noise_read), ("shot", self.noise_shot)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} noise must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub(crate) fn gain(&self, color: usize) -> f64 {
        match color {
            0 => self.wb_gains.0,
            2 => self.wb_gains.1,
            _ => 1.0,
        }
    }
}

/// Inverse of a 3x3 matrix by cofactors.
pub fn invert3(m: &Ccm) -> Result<Ccm> {
    let c = |r: usize, k: usize| {
        let (r0, r1) = ((r + 1) % 3, (r + 2) % 3);
        let (k0, k1) = ((k + 1) % 3, (k + 2) % 3);
        m[r0][k0] * m[r1][k1] - m[r0][k1] * m[r1][k0]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::invalid("non-invertible ccm"));
    }
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = c(k, r) / det;
        }
    }
    Ok(inv)
}

/// Standard sRGB transfer function, code in `[0, 1]` to linear.
pub fn srgb_decode(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse of [`srgb_decode`].
pub fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Synthesizes a noisy RGGB mosaic from an sRGB image, drawing noise from
/// stream 0 of `cfg.seed`.
pub fn unprocess(rgb: &RgbImage, cfg: &UnprocessConfig) -> Result<BayerImage> {
    unprocess_with_rng(rgb, cfg, &mut rng_stream(cfg.seed, 0))
}

/// As [`unprocess`], drawing one standard normal per pixel in raster order
/// from `rng`.
pub fn unprocess_with_rng(rgb: &RgbImage, cfg: &UnprocessConfig, rng: &mut ChaCha8Rng) -> Result<BayerImage> {
    cfg.validate()?;
    let (w, h) = (rgb.width(), rgb.height());
    if w == 0 || h == 0 || w % 2 != 0 || h % 2 != 0 {
        return Err(Error::invalid(format!("unprocess needs even extents, got {w}x{h}")));
    }
    let inv = invert3(&cfg.ccm)?;
    let lut: Vec<f64> = (0..=255).map(|c| srgb_decode(c as f64 / 255.0)).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let px = rgb.pixel(y, x);
            let lin = [lut[px[0] as usize], lut[px[1] as usize], lut[px[2] as usize]];
            let color = cfa_color(y, x);
            let row = &inv[color];
            let cam = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
            let v = cam / cfg.gain(color);
            let var = cfg.noise_read + cfg.noise_shot * v.max(0.0);
            let z: f64 = rng.sample(StandardNormal);
            let noisy = (v + var.sqrt() * z).clamp(0.0, 1.0);
            out.push((noisy * MAX_CODE as f64).round() as u16);
        }
    }
    BayerImage::new(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_matrix() {
        let inv = invert3(&DEFAULT_CCM).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| DEFAULT_CCM[i][k] * inv[k][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!(invert3(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]).is_err());
    }

    #[test]
    fn transfer_function_round_trip() {
        for i in 0..=100 {
            let c = i as f64 / 100.0;
            assert!((srgb_encode(srgb_decode(c)) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_config_is_in_range() {
        for seed in 0..50 {
            let c = UnprocessConfig::sample(seed);
            c.validate().unwrap();
            assert!((1.5..=2.5).contains(&c.wb_gains.0));
            assert!((1.3..=2.0).contains(&c.wb_gains.1));
            assert!((1e-6..=1e-4 * (1.0 + 1e-12)).contains(&c.noise_read));
            assert!((1e-4..=1e-2 * (1.0 + 1e-12)).contains(&c.noise_shot));
        }
    }

    #[test]
    fn linear_gray_collapses_to_identity() {
        // sRGB code whose linear value is closest to 0.5
        let code = (srgb_encode(0.5) * 255.0).round() as u8;
        let img = RgbImage::new(4, 4, vec![code; 48]).unwrap();
        let b = unprocess(&img, &UnprocessConfig::clean(0)).unwrap();
        // one 8-bit sRGB step near mid-gray spans about six 10-bit linear codes
        let exact = srgb_decode(code as f64 / 255.0) * 1023.0;
        assert!((exact - 511.5).abs() <= 3.5);
        for &c in b.data() {
            assert!((c as f64 - exact).abs() <= 1.0, "code {c}");
        }
    }

    #[test]
    fn pure_red_hits_only_red_sites() {
        let img = RgbImage::new(4, 4, [255u8, 0, 0].repeat(16)).unwrap();
        let cfg = UnprocessConfig {
            wb_gains: (2.0, 1.5),
            ..UnprocessConfig::clean(0)
        };
        let b = unprocess(&img, &cfg).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expect = if cfa_color(y, x) == 0 { 512 } else { 0 };
                assert_eq!(b.at(y, x), expect);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let img = RgbImage::new(3, 2, vec![0; 18]).unwrap();
        assert!(unprocess(&img, &UnprocessConfig::clean(0)).is_err());
        let img = RgbImage::new(2, 2, vec![0; 12]).unwrap();
        let singular = UnprocessConfig {
            ccm: [[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]],
            ..UnprocessConfig::clean(0)
        };
        assert!(unprocess(&img, &singular).is_err());
    }
}
