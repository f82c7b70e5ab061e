use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use super::RgbImage;
use crate::error::Result;
use crate::tensor::rng_stream;

enum Shape {
    Disc {
        cx: f32,
        cy: f32,
        r: f32,
    },
    Rect {
        cx: f32,
        cy: f32,
        hw: f32,
        hh: f32,
        cos: f32,
        sin: f32,
    },
}

struct Layer {
    shape: Shape,
    color: [f32; 3],
    /// Stripe texture: `(frequency, angle, amplitude)`.
    stripes: Option<(f32, f32, f32)>,
}

impl Layer {
    /// Signed distance in pixels, negative inside.
    fn distance(&self, x: f32, y: f32) -> f32 {
        match self.shape {
            Shape::Disc { cx, cy, r } => ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - r,
            Shape::Rect {
                cx,
                cy,
                hw,
                hh,
                cos,
                sin,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
                (u.abs() - hw).max(v.abs() - hh)
            }
        }
    }
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    let base: f32 = rng.random_range(0.05..0.95);
    let sat: f32 = rng.random_range(0.0..0.6);
    [0; 3].map(|_| (base + sat * rng.random_range(-1.0f32..1.0)).clamp(0.0, 1.0))
}

/// Procedural test scene: a colour gradient overlaid with anti-aliased discs
/// and rotated rectangles, some carrying stripe textures.
pub fn render_scene(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = rng_stream(seed, 0);
    let (wf, hf) = (width as f32, height as f32);
    let scale = wf.min(hf);
    let c0 = random_color(&mut rng);
    let c1 = random_color(&mut rng);
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    let n = rng.random_range(12..28);
    let layers: Vec<Layer> = (0..n)
        .map(|_| {
            let cx = rng.random_range(0.0..wf);
            let cy = rng.random_range(0.0..hf);
            let size = scale * rng.random_range(0.03f32..0.25);
            let shape = if rng.random_bool(0.5) {
                Shape::Disc { cx, cy, r: size }
            } else {
                let t: f32 = rng.random_range(0.0..std::f32::consts::PI);
                Shape::Rect {
                    cx,
                    cy,
                    hw: size,
                    hh: size * rng.random_range(0.3f32..1.0),
                    cos: t.cos(),
                    sin: t.sin(),
                }
            };
            let stripes = rng.random_bool(0.3).then(|| {
                (
                    rng.random_range(0.15f32..0.9),
                    rng.random_range(0.0..std::f32::consts::PI),
                    rng.random_range(0.1f32..0.35),
                )
            });
            Layer {
                shape,
                color: random_color(&mut rng),
                stripes,
            }
        })
        .collect();

    let mut data = vec![0u8; 3 * width * height];
    data.par_chunks_mut(3 * width).enumerate().for_each(|(y, row)| {
        let yf = y as f32 + 0.5;
        for x in 0..width {
            let xf = x as f32 + 0.5;
            let t = (((xf / wf - 0.5) * gx + (yf / hf - 0.5) * gy) + 0.5).clamp(0.0, 1.0);
            let mut px = [0; 3].map(|_| 0.0f32);
            for c in 0..3 {
                px[c] = c0[c] + (c1[c] - c0[c]) * t;
            }
            for l in &layers {
                let cover = (0.5 - l.distance(xf, yf)).clamp(0.0, 1.0);
                if cover == 0.0 {
                    continue;
                }
                let tex = l
                    .stripes
                    .map_or(0.0, |(f, a, amp)| amp * (f * (xf * a.cos() + yf * a.sin())).sin());
                for c in 0..3 {
                    let v = (l.color[c] + tex).clamp(0.0, 1.0);
                    px[c] += (v - px[c]) * cover;
                }
            }
            for c in 0..3 {
                row[3 * x + c] = (px[c].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    });
    RgbImage::new(width, height, data).expect("buffer sized for extents")
}

/// Writes `count` scenes as `scene_NNNN.png` into `dir`.
pub fn write_scenes(dir: &Path, count: usize, width: usize, height: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    (0..count).into_par_iter().try_for_each(|i| {
        render_scene(width, height, seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .write_png(&dir.join(format!("scene_{i:04}.png")))
    })
}
