use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use super::unprocess::{unprocess_with_rng, Ccm, UnprocessConfig};
use super::{pack_bayer, render_scene, BayerImage, RgbImage};
use crate::error::{Error, Result};
use crate::tensor::{rng_stream, Tensor};

const FORMAT: &str = "ispnet-pairs-v1";
const SOURCE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff", "ppm"];

/// List of RAW / RGB file pairs plus the `key=value` header that produced them.
///
/// On disk: `# key=value` header lines, then one `raw_path<TAB>rgb_path`
/// line per pair, paths relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub header: Vec<(String, String)>,
    pub pairs: Vec<(PathBuf, PathBuf)>,
}

fn fmt_ccm(ccm: &Ccm) -> String {
    ccm.iter().flatten().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let err = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            msg,
        };
        let text = fs::read_to_string(path)?;
        let mut header = Vec::new();
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                if let Some((k, v)) = h.trim().split_once('=') {
                    header.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let (raw, rgb) = line
                .split_once('\t')
                .ok_or_else(|| err(format!("line {}: expected `raw<TAB>rgb`", n + 1)))?;
            pairs.push((PathBuf::from(raw), PathBuf::from(rgb)));
        }
        Ok(Manifest {
            dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            header,
            pairs,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(s, "# {k}={v}");
        }
        for (raw, rgb) in &self.pairs {
            let _ = writeln!(s, "{}\t{}", raw.display(), rgb.display());
        }
        s
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Recovers the generator configuration from the header.
    pub fn config(&self) -> Result<UnprocessConfig> {
        let err = |msg: String| Error::Manifest {
            path: self.dir.clone(),
            msg,
        };
        let field = |k: &str| self.get(k).ok_or_else(|| err(format!("header lacks `{k}`")));
        let floats = |k: &str, n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = field(k)?
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(format!("`{k}`: {e}")))?;
            if v.len() != n {
                return Err(err(format!("`{k}` needs {n} values, found {}", v.len())));
            }
            Ok(v)
        };
        let m = floats("ccm", 9)?;
        let g = floats("wb_gains", 2)?;
        let cfg = UnprocessConfig {
            ccm: [[m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]]],
            wb_gains: (g[0], g[1]),
            noise_read: floats("noise_read", 1)?[0],
            noise_shot: floats("noise_shot", 1)?[0],
            seed: field("seed")?.parse().map_err(|e| err(format!("`seed`: {e}")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.dir.join(p)
    }
}

fn list_sources(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| SOURCE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Cuts `count` random `patch x patch` crops from the images in `src_dir`,
/// unprocesses each into a mosaic and writes `raw/NNNNNN.png`,
/// `rgb/NNNNNN.png` and `manifest.txt` under `out_dir`.
///
/// Pair `i` uses source `i mod n_sources` and draws its crop offset and noise
/// from stream `i + 1` of `cfg.seed`, so output does not depend on thread
/// scheduling.
pub fn make_dataset(
    src_dir: &Path,
    out_dir: &Path,
    cfg: &UnprocessConfig,
    patch: usize,
    count: usize,
) -> Result<Manifest> {
    cfg.validate()?;
    if patch == 0 || patch % 2 != 0 {
        return Err(Error::invalid(format!(
            "patch size must be even and positive, got {patch}"
        )));
    }
    let files = list_sources(src_dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no source images in {}", src_dir.display())));
    }
    let sources: Vec<RgbImage> = files
        .par_iter()
        .map(|p| {
            let img = RgbImage::read_png(p)?;
            if img.width() < patch || img.height() < patch {
                return Err(Error::invalid(format!(
                    "{}: {}x{} is smaller than the {patch}px patch",
                    p.display(),
                    img.width(),
                    img.height()
                )));
            }
            Ok(img)
        })
        .collect::<Result<_>>()?;

    fs::create_dir_all(out_dir.join("raw"))?;
    fs::create_dir_all(out_dir.join("rgb"))?;
    let pairs: Vec<(PathBuf, PathBuf)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let src = &sources[i % sources.len()];
            let mut rng = rng_stream(cfg.seed, i as u64 + 1);
            let y0 = 2 * rng.random_range(0..=(src.height() - patch) / 2);
            let x0 = 2 * rng.random_range(0..=(src.width() - patch) / 2);
            let rgb = src.crop(y0, x0, patch, patch)?;
            let raw = unprocess_with_rng(&rgb, cfg, &mut rng)?;
            let raw_rel = PathBuf::from(format!("raw/{i:06}.png"));
            let rgb_rel = PathBuf::from(format!("rgb/{i:06}.png"));
            raw.write_png(&out_dir.join(&raw_rel))?;
            rgb.write_png(&out_dir.join(&rgb_rel))?;
            Ok((raw_rel, rgb_rel))
        })
        .collect::<Result<_>>()?;

    let manifest = Manifest {
        dir: out_dir.to_path_buf(),
        header: vec![
            ("format".into(), FORMAT.into()),
            ("seed".into(), cfg.seed.to_string()),
            ("patch".into(), patch.to_string()),
            ("count".into(), count.to_string()),
            ("sources".into(), sources.len().to_string()),
            ("ccm".into(), fmt_ccm(&cfg.ccm)),
            ("wb_gains".into(), format!("{},{}", cfg.wb_gains.0, cfg.wb_gains.1)),
            ("noise_read".into(), cfg.noise_read.to_string()),
            ("noise_shot".into(), cfg.noise_shot.to_string()),
        ],
        pairs,
    };
    fs::write(out_dir.join("manifest.txt"), manifest.to_text())?;
    Ok(manifest)
}

/// Decoded RAW / RGB pairs held in memory.
#[derive(Clone, Debug)]
pub struct PairSet {
    pub raws: Vec<BayerImage>,
    pub rgbs: Vec<RgbImage>,
    pub config: Option<UnprocessConfig>,
}

impl PairSet {
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let loaded: Vec<(BayerImage, RgbImage)> = manifest
            .pairs
            .par_iter()
            .map(|(raw, rgb)| {
                let r = BayerImage::read_png(&manifest.resolve(raw))?;
                let g = RgbImage::read_png(&manifest.resolve(rgb))?;
                if (r.width(), r.height()) != (g.width(), g.height()) {
                    return Err(Error::Manifest {
                        path: manifest.resolve(raw),
                        msg: format!(
                            "RAW is {}x{} but RGB is {}x{}",
                            r.width(),
                            r.height(),
                            g.width(),
                            g.height()
                        ),
                    });
                }
                Ok((r, g))
            })
            .collect::<Result<_>>()?;
        let (raws, rgbs) = loaded.into_iter().unzip();
        Ok(PairSet {
            raws,
            rgbs,
            config: manifest.config().ok(),
        })
    }

    pub fn load_path(path: &Path) -> Result<Self> {
        Self::load(&Manifest::read(path)?)
    }

    /// Renders `count` scenes of `patch x patch` pixels and unprocesses them
    /// in memory; pair `i` uses scene seed `scene_seed + i` and noise stream
    /// `i + 1` of `cfg.seed`.
    pub fn synthesize(count: usize, patch: usize, cfg: &UnprocessConfig, scene_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let pairs: Vec<(BayerImage, RgbImage)> = (0..count)
            .into_par_iter()
            .map(|i| {
                let rgb = render_scene(patch, patch, scene_seed.wrapping_add(i as u64));
                let raw = unprocess_with_rng(&rgb, cfg, &mut rng_stream(cfg.seed, i as u64 + 1))?;
                Ok((raw, rgb))
            })
            .collect::<Result<_>>()?;
        let (raws, rgbs) = pairs.into_iter().unzip();
        Ok(PairSet {
            raws,
            rgbs,
            config: Some(*cfg),
        })
    }

    pub fn len(&self) -> usize {
        self.raws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raws.is_empty()
    }

    pub fn packed(&self, i: usize) -> Tensor {
        pack_bayer(&self.raws[i])
    }

    pub fn target(&self, i: usize) -> Tensor {
        self.rgbs[i].to_tensor()
    }

    /// Splits off the last `n` pairs.
    pub fn split_tail(mut self, n: usize) -> (Self, Self) {
        let k = self.len().saturating_sub(n);
        let tail = PairSet {
            raws: self.raws.split_off(k),
            rgbs: self.rgbs.split_off(k),
            config: self.config,
        };
        (self, tail)
    }
}
