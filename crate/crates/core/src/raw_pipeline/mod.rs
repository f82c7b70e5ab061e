//! Bayer-domain data: packing, synthetic RAW generation, datasets and
//! augmentation.
//!
//! The colour filter array is always RGGB: R at `(0, 0)`, G at `(0, 1)` and
//! `(1, 0)`, B at `(1, 1)` of every 2x2 tile. Black level is zero.

mod dataset;
mod demosaic;
mod scene;
mod unprocess;

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::nn::{pixel_shuffle, space_to_depth};
use crate::tensor::{Shape, Tensor};

pub use dataset::{make_dataset, Manifest, PairSet};
pub use demosaic::{bilinear_demosaic, BilinearBaseline};
pub use scene::{render_scene, write_scenes};
pub use unprocess::{
    invert3, srgb_decode, srgb_encode, unprocess, unprocess_with_rng, Ccm, UnprocessConfig, DEFAULT_CCM,
};

pub const BIT_DEPTH: u32 = 10;
pub const MAX_CODE: u16 = (1 << BIT_DEPTH) - 1;

/// CFA colour at pixel `(y, x)`: 0 = R, 1 = G, 2 = B.
#[inline]
pub fn cfa_color(y: usize, x: usize) -> usize {
    match (y % 2, x % 2) {
        (0, 0) => 0,
        (1, 1) => 2,
        _ => 1,
    }
}

/// Single-channel mosaic of 10-bit codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BayerImage {
    width: usize,
    height: usize,
    data: Vec<u16>,
}

impl BayerImage {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
            return Err(Error::invalid(format!(
                "Bayer extents must be even, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "Bayer buffer holds {} codes, expected {}",
                data.len(),
                width * height
            )));
        }
        if let Some(&c) = data.iter().find(|&&c| c > MAX_CODE) {
            return Err(Error::invalid(format!("code {c} exceeds {MAX_CODE}")));
        }
        Ok(BayerImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[u16] {
        &self.data
    }
    pub fn at(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.width + x]
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let img = match img {
            image::DynamicImage::ImageLuma16(b) => b,
            other => {
                return Err(Error::invalid(format!(
                    "{}: expected a 16-bit grayscale PNG, found {:?}",
                    path.display(),
                    other.color()
                )))
            }
        };
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        ImageBuffer::<Luma<u16>, _>::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction")
            .save(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Interleaved 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::invalid(format!(
                "RGB buffer holds {} bytes, expected {}",
                data.len(),
                3 * width * height
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::invalid(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(3 * w * h);
        for y in y0..y0 + h {
            let row = 3 * (y * self.width + x0);
            data.extend_from_slice(&self.data[row..row + 3 * w]);
        }
        Ok(RgbImage {
            width: w,
            height: h,
            data,
        })
    }

    /// `(1, 3, H, W)` tensor with values `code / 255`.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = (self.height, self.width);
        let mut out = vec![0f32; 3 * h * w];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * h * w + i] = px[c] as f32 / 255.0;
            }
        }
        Tensor::from_parts(Shape::new(1, 3, h, w), out)
    }

    /// Inverse of [`RgbImage::to_tensor`]; values are clamped to `[0, 1]` and
    /// rounded. Only the first batch item is used.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.c() != 3 || s.n() == 0 {
            return Err(Error::shape("rgb_from_tensor", format!("expected (N,3,H,W), got {s}")));
        }
        let (h, w) = (s.h(), s.w());
        let mut data = vec![0u8; 3 * h * w];
        for c in 0..3 {
            for (i, &v) in t.plane(0, c).iter().enumerate() {
                data[3 * i + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Ok(RgbImage {
            width: w,
            height: h,
            data,
        })
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        ImageBuffer::<Rgb<u8>, _>::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction")
            .save(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// `(1, 1, H, W)` tensor of codes divided by 1023.
pub fn normalize(b: &BayerImage) -> Tensor {
    let scale = 1.0 / MAX_CODE as f32;
    Tensor::from_parts(
        Shape::new(1, 1, b.height, b.width),
        b.data.iter().map(|&c| c as f32 * scale).collect(),
    )
}

/// Packs a mosaic into `(1, 4, H/2, W/2)` with channels `(R, Gr, Gb, B)`.
pub fn pack_bayer(b: &BayerImage) -> Tensor {
    space_to_depth(&normalize(b), 2).expect("Bayer extents are even")
}

/// Inverse of [`pack_bayer`] on the float path, `(N, 4, h, w) -> (N, 1, 2h, 2w)`.
pub fn unpack_bayer(t: &Tensor) -> Result<Tensor> {
    if t.shape().c() != 4 {
        return Err(Error::shape(
            "unpack_bayer",
            format!("expected 4 channels, got {}", t.shape()),
        ));
    }
    pixel_shuffle(t, 2)
}

fn mirror_rows(t: &Tensor) -> Tensor {
    let w = t.shape().w();
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(w) {
        row.reverse();
    }
    Tensor::from_parts(t.shape(), out)
}

/// Horizontal flip of a packed RAW / RGB pair.
///
/// The RAW side is flipped in the unpacked mosaic, which moves R and B to odd
/// columns; it is then repacked with the column phase swapped so channel 0
/// still holds R samples. The result equals mirroring each packed plane.
pub fn augment_flip(raw: &Tensor, rgb: &Tensor, flip: bool) -> Result<(Tensor, Tensor)> {
    if !flip {
        return Ok((raw.clone(), rgb.clone()));
    }
    let s = raw.shape();
    let mosaic = mirror_rows(&unpack_bayer(raw)?);
    let (h, w) = (s.h(), s.w());
    let mut out = vec![0f32; s.len()];
    let m = mosaic.data();
    for n in 0..s.n() {
        let plane = &m[n * 4 * h * w..(n + 1) * 4 * h * w];
        for (ch, (dy, dx)) in [(0, 1), (0, 0), (1, 1), (1, 0)].into_iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    out[s.index(n, ch, y, x)] = plane[(2 * y + dy) * 2 * w + 2 * x + dx];
                }
            }
        }
    }
    Ok((Tensor::from_parts(s, out), mirror_rows(rgb)))
}
