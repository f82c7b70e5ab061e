//! Per-layer latency profiling and challenge-style score reports.
//!
//! Timings are medians over repeated forward passes on this machine's CPU.
//! They are labelled with the hardware and thread count and are not
//! comparable to mobile accelerator figures.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::metrics::{mai_score, ScoreInputs};
use crate::models::ModelGraph;
use crate::raw_pipeline::PairSet;
use crate::tensor::{Shape, Tensor};
use crate::trainer::evaluate;

pub const HD_WIDTH: usize = 1920;
pub const HD_HEIGHT: usize = 1088;
pub const MIN_RUNS: usize = 5;
pub const MIN_WARMUP: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTiming {
    pub index: usize,
    pub name: String,
    pub op: String,
    pub median_ms: f64,
    /// Share of the summed per-layer medians, in percent.
    pub percent: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub model: String,
    /// Full-resolution RAW extent `(height, width)`.
    pub geometry: (usize, usize),
    pub input: Shape,
    pub layers: Vec<LayerTiming>,
    pub total_ms: f64,
    pub runs: usize,
    pub warmup: usize,
    pub threads: usize,
    pub hardware: String,
    pub parameter_bytes: usize,
    pub quality: Option<Quality>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// CPU model name, falling back to the target architecture.
pub fn hardware_label() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

/// Times `runs` forward passes (after `warmup` untimed ones) on a random
/// packed input for a `height x width` RAW frame.
pub fn profile(model: &ModelGraph, height: usize, width: usize, runs: usize, warmup: usize) -> Result<BenchReport> {
    if runs < MIN_RUNS || warmup < MIN_WARMUP {
        return Err(Error::invalid(format!(
            "need at least {MIN_RUNS} runs and {MIN_WARMUP} warmups, got {runs} and {warmup}"
        )));
    }
    let m = model.spatial_multiple();
    if height % 2 != 0 || width % 2 != 0 || (height / 2) % m != 0 || (width / 2) % m != 0 || height == 0 || width == 0 {
        return Err(Error::invalid(format!(
            "{width}x{height} is incompatible with `{}`: extents must be even and the packed input divisible by {m}",
            model.name()
        )));
    }
    let input = Shape::new(1, model.in_channels(), height / 2, width / 2);
    let x = Tensor::uniform(input, 0.0, 1.0, 0);
    let n = model.layers().len();
    for _ in 0..warmup {
        model.forward(&x)?;
    }
    let mut per_layer = vec![Vec::with_capacity(runs); n];
    let mut totals = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        model.forward_timed(&x, |i, d| per_layer[i].push(ms(d)))?;
        totals.push(ms(start.elapsed()));
    }
    let medians: Vec<f64> = per_layer.iter_mut().map(|v| median(v)).collect();
    let sum: f64 = medians.iter().sum();
    let layers = model
        .layers()
        .iter()
        .zip(&medians)
        .enumerate()
        .map(|(i, (l, &t))| LayerTiming {
            index: i,
            name: l.name.clone(),
            op: l.kind.op_name().to_string(),
            median_ms: t,
            percent: if sum > 0.0 { 100.0 * t / sum } else { 0.0 },
        })
        .collect();
    Ok(BenchReport {
        model: model.name().to_string(),
        geometry: (height, width),
        input,
        layers,
        total_ms: median(&mut totals),
        runs,
        warmup,
        threads: rayon::current_num_threads(),
        hardware: hardware_label(),
        parameter_bytes: model.parameter_bytes(),
        quality: None,
    })
}

/// Profiles at 1920x1088 with 10 runs after 3 warmups.
pub fn profile_hd(model: &ModelGraph) -> Result<BenchReport> {
    profile(model, HD_HEIGHT, HD_WIDTH, 10, 3)
}

/// Adds validation PSNR / SSIM and the score for the measured runtime.
pub fn score_report(model: &ModelGraph, validation: &PairSet, report: BenchReport) -> Result<BenchReport> {
    let q = evaluate(model, validation)?;
    let score = mai_score(ScoreInputs::new(q.psnr, report.total_ms / 1e3)?);
    Ok(BenchReport {
        quality: Some(Quality {
            psnr: q.psnr,
            ssim: q.ssim,
            score,
        }),
        ..report
    })
}

impl BenchReport {
    pub fn layer_sum_ms(&self) -> f64 {
        self.layers.iter().map(|l| l.median_ms).sum()
    }

    /// Share of the summed layer time spent in convolutions, in percent.
    pub fn conv_share(&self) -> f64 {
        self.layers
            .iter()
            .filter(|l| l.op.starts_with("conv"))
            .map(|l| l.percent)
            .sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let (h, w) = self.geometry;
        let _ = writeln!(s, "model:      {}", self.model);
        let _ = writeln!(s, "geometry:   {w}x{h} RAW, packed input {}", self.input);
        let _ = writeln!(
            s,
            "hardware:   {} ({} thread{}; desktop CPU timings, not mobile APU)",
            self.hardware,
            self.threads,
            if self.threads == 1 { "" } else { "s" }
        );
        let _ = writeln!(
            s,
            "runs:       {} timed, {} warmup, medians reported",
            self.runs, self.warmup
        );
        let _ = writeln!(s);
        let name_w = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            s,
            "{:>3}  {:<name_w$}  {:<18} {:>10} {:>7}",
            "#", "layer", "op", "median_ms", "share"
        );
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:>3}  {:<name_w$}  {:<18} {:>10.3} {:>6.1}%",
                l.index, l.name, l.op, l.median_ms, l.percent
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "layer sum:  {:.3} ms", self.layer_sum_ms());
        let _ = writeln!(s, "total:      {:.3} ms", self.total_ms);
        let _ = writeln!(s, "parameters: {} bytes", self.parameter_bytes);
        if let Some(q) = self.quality {
            let _ = writeln!(
                s,
                "PSNR {:.2} dB, SSIM {:.4}, runtime {:.1} ms, Final Score {:.2}",
                q.psnr, q.ssim, self.total_ms, q.score
            );
        }
        s
    }

    /// One row per layer plus a `total` row:
    /// `index,layer,op,median_ms,percent`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,layer,op,median_ms,percent\n");
        for l in &self.layers {
            let _ = writeln!(s, "{},{},{},{:.6},{:.3}", l.index, l.name, l.op, l.median_ms, l.percent);
        }
        let _ = writeln!(s, "total,,,{:.6},100.000", self.total_ms);
        s
    }
}
