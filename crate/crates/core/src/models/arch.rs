use std::fmt;
use std::str::FromStr;

use super::graph::{GraphBuilder, LayerKind, ModelGraph, Src};
use crate::error::{Error, Result};
use crate::nn::Activation::{Relu, Sigmoid, Tanh};
use crate::tensor::Tensor;

/// Packed Bayer planes fed to every model.
pub const RAW_CHANNELS: usize = 4;
/// Channel reduction inside the attention gate of a DAM block.
pub const DAM_REDUCTION: usize = 4;

/// Three-layer network: 4 -> 16 -> 16 -> 12 channels, then a 2x pixel shuffle
/// to full-resolution RGB.
pub fn smallnet(seed: u64) -> Result<ModelGraph> {
    let mut b = GraphBuilder::new();
    let x = b.conv("conv1", Src::Input, RAW_CHANNELS, 16, 3, Some(Tanh));
    let x = b.conv("conv2", x, 16, 16, 3, Some(Relu));
    let x = b.conv("conv3", x, 16, 12, 3, Some(Relu));
    b.push("shuffle", LayerKind::PixelShuffle { factor: 2 }, vec![x]);
    b.finish("smallnet", RAW_CHANNELS, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsaNetConfig {
    /// Channels after the first convolution; the DAM blocks run at twice this.
    pub base: usize,
    pub dams: usize,
}

impl Default for CsaNetConfig {
    fn default() -> Self {
        CsaNetConfig { base: 32, dams: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub base: usize,
    /// Number of 2x downsampling stages.
    pub depth: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig { base: 16, depth: 3 }
    }
}

/// Appends a dual attention module and returns its output (no residual).
///
/// `f = relu(conv(relu(conv(x))))`; a spatial branch gates `f` with a
/// dilated depthwise 5x5 response, a channel branch gates it with a
/// squeeze-excite vector, and a 1x1 convolution fuses both.
fn push_dam(b: &mut GraphBuilder, prefix: &str, src: Src, c: usize) -> Src {
    let f = b.conv(format!("{prefix}.conv1"), src, c, c, 3, Some(Relu));
    let f = b.conv(format!("{prefix}.conv2"), f, c, c, 3, Some(Relu));
    let s = b.push(
        format!("{prefix}.sa_dw"),
        LayerKind::Conv {
            in_channels: c,
            out_channels: c,
            kernel: 5,
            stride: 1,
            dilation: 2,
            groups: c,
            activation: None,
        },
        vec![f],
    );
    let sa = b.push(format!("{prefix}.sa_mul"), LayerKind::Mul, vec![f, s]);
    let p = b.push(format!("{prefix}.ca_pool"), LayerKind::GlobalAvgPool, vec![f]);
    let e = b.conv(format!("{prefix}.ca_fc1"), p, c, c / DAM_REDUCTION, 1, Some(Relu));
    let e = b.conv(format!("{prefix}.ca_fc2"), e, c / DAM_REDUCTION, c, 1, Some(Sigmoid));
    let ca = b.push(format!("{prefix}.ca_mul"), LayerKind::Mul, vec![f, e]);
    let cat = b.push(format!("{prefix}.concat"), LayerKind::Concat, vec![sa, ca]);
    b.conv(format!("{prefix}.fuse"), cat, 2 * c, c, 1, None)
}

/// A standalone DAM block over `channels` feature maps.
pub fn dam_block(channels: usize, seed: u64) -> Result<ModelGraph> {
    if channels < DAM_REDUCTION || channels % DAM_REDUCTION != 0 {
        return Err(Error::invalid(format!(
            "DAM channels must be a positive multiple of {DAM_REDUCTION}, got {channels}"
        )));
    }
    let mut b = GraphBuilder::new();
    push_dam(&mut b, "dam", Src::Input, channels);
    b.finish(format!("dam-c{channels}"), channels, seed)
}

/// Runs a DAM block built by [`dam_block`]; output shape equals input shape.
pub fn dam_forward(block: &ModelGraph, x: &Tensor) -> Result<Tensor> {
    block.forward(x)
}

/// Strided encoder, residual DAM blocks at half resolution, transposed-conv
/// decoder and a sigmoid colour head.
pub fn csanet(cfg: CsaNetConfig, seed: u64) -> Result<ModelGraph> {
    let c = 2 * cfg.base;
    if cfg.base == 0 || cfg.dams == 0 || c % DAM_REDUCTION != 0 {
        return Err(Error::invalid(format!("invalid CSANet config {cfg:?}")));
    }
    let mut b = GraphBuilder::new();
    let x = b.conv("enc1", Src::Input, RAW_CHANNELS, cfg.base, 3, Some(Relu));
    let mut x = b.push(
        "enc2",
        LayerKind::Conv {
            in_channels: cfg.base,
            out_channels: c,
            kernel: 3,
            stride: 2,
            dilation: 1,
            groups: 1,
            activation: Some(Relu),
        },
        vec![x],
    );
    for i in 0..cfg.dams {
        let prefix = format!("dam{}", i + 1);
        let d = push_dam(&mut b, &prefix, x, c);
        x = b.push(format!("{prefix}.skip"), LayerKind::Add, vec![x, d]);
    }
    let x = b.push(
        "up",
        LayerKind::ConvTranspose {
            in_channels: c,
            out_channels: cfg.base,
            kernel: 2,
            activation: Some(Relu),
        },
        vec![x],
    );
    let x = b.conv("head", x, cfg.base, 12, 3, None);
    let x = b.push("shuffle", LayerKind::PixelShuffle { factor: 2 }, vec![x]);
    b.conv("color", x, 3, 3, 3, Some(Sigmoid));
    Ok(b.finish(ModelName::CsaNet(cfg).to_string(), RAW_CHANNELS, seed)?
        .with_spatial_multiple(2))
}

/// Encoder-decoder with skip connections, max-pool downsampling and
/// bilinear upsampling.
pub fn unet(cfg: UNetConfig, seed: u64) -> Result<ModelGraph> {
    if cfg.base == 0 || cfg.depth == 0 || cfg.depth > 8 {
        return Err(Error::invalid(format!("invalid U-Net config {cfg:?}")));
    }
    let mut b = GraphBuilder::new();
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut x = Src::Input;
    let mut cin = RAW_CHANNELS;
    for level in 0..cfg.depth {
        let c = cfg.base << level;
        let y = b.conv(format!("enc{level}.conv1"), x, cin, c, 3, Some(Relu));
        let y = b.conv(format!("enc{level}.conv2"), y, c, c, 3, Some(Relu));
        skips.push((y, c));
        x = b.push(format!("enc{level}.pool"), LayerKind::MaxPool2, vec![y]);
        cin = c;
    }
    let cb = cfg.base << cfg.depth;
    let y = b.conv("bottleneck.conv1", x, cin, cb, 3, Some(Relu));
    x = b.conv("bottleneck.conv2", y, cb, cb, 3, Some(Relu));
    cin = cb;
    for level in (0..cfg.depth).rev() {
        let (skip, c) = skips[level];
        let u = b.push(format!("dec{level}.up"), LayerKind::BilinearUp2, vec![x]);
        let u = b.conv(format!("dec{level}.reduce"), u, cin, c, 3, Some(Relu));
        let cat = b.push(format!("dec{level}.concat"), LayerKind::Concat, vec![skip, u]);
        let y = b.conv(format!("dec{level}.conv1"), cat, 2 * c, c, 3, Some(Relu));
        x = b.conv(format!("dec{level}.conv2"), y, c, c, 3, Some(Relu));
        cin = c;
    }
    let y = b.conv("head", x, cin, 12, 3, None);
    let y = b.push("shuffle", LayerKind::PixelShuffle { factor: 2 }, vec![y]);
    b.conv("color", y, 3, 3, 3, Some(Sigmoid));
    Ok(b.finish(ModelName::UNet(cfg).to_string(), RAW_CHANNELS, seed)?
        .with_spatial_multiple(1 << cfg.depth))
}

/// Architecture identifier; the string form is stored in checkpoints and
/// is enough to rebuild the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelName {
    Smallnet,
    CsaNet(CsaNetConfig),
    UNet(UNetConfig),
    Dam { channels: usize },
}

impl ModelName {
    pub fn build(self, seed: u64) -> Result<ModelGraph> {
        match self {
            ModelName::Smallnet => smallnet(seed),
            ModelName::CsaNet(c) => csanet(c, seed),
            ModelName::UNet(c) => unet(c, seed),
            ModelName::Dam { channels } => dam_block(channels, seed),
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelName::Smallnet => write!(f, "smallnet"),
            ModelName::CsaNet(c) => write!(f, "csanet-b{}-n{}", c.base, c.dams),
            ModelName::UNet(c) => write!(f, "unet-b{}-d{}", c.base, c.depth),
            ModelName::Dam { channels } => write!(f, "dam-c{channels}"),
        }
    }
}

/// Parses `-{prefix}{n}` suffix fields in order, e.g. `-b32-n2`.
fn fields(rest: &str, prefixes: &[char]) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    let mut parts = rest.split('-');
    if !parts.next()?.is_empty() {
        return None;
    }
    for &p in prefixes {
        out.push(parts.next()?.strip_prefix(p)?.parse().ok()?);
    }
    parts.next().is_none().then_some(out)
}

impl FromStr for ModelName {
    type Err = Error;

    /// Accepts `smallnet`, `csanet`, `unet` (default configurations) and the
    /// fully qualified forms produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownModel(s.to_string());
        match s {
            "smallnet" => return Ok(ModelName::Smallnet),
            "csanet" => return Ok(ModelName::CsaNet(CsaNetConfig::default())),
            "unet" => return Ok(ModelName::UNet(UNetConfig::default())),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("csanet") {
            let v = fields(rest, &['b', 'n']).ok_or_else(unknown)?;
            return Ok(ModelName::CsaNet(CsaNetConfig { base: v[0], dams: v[1] }));
        }
        if let Some(rest) = s.strip_prefix("unet") {
            let v = fields(rest, &['b', 'd']).ok_or_else(unknown)?;
            return Ok(ModelName::UNet(UNetConfig {
                base: v[0],
                depth: v[1],
            }));
        }
        if let Some(rest) = s.strip_prefix("dam") {
            let v = fields(rest, &['c']).ok_or_else(unknown)?;
            return Ok(ModelName::Dam { channels: v[0] });
        }
        Err(unknown())
    }
}

/// Builds a model by name with parameters initialised from `seed`.
pub fn build_model(name: &str, seed: u64) -> Result<ModelGraph> {
    name.parse::<ModelName>()?.build(seed)
}
