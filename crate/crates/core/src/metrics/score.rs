use crate::error::{Error, Result};

/// Fidelity and latency of one submission.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreInputs {
    /// dB
    pub psnr: f64,
    /// seconds
    pub runtime: f64,
}

impl ScoreInputs {
    pub fn new(psnr: f64, runtime: f64) -> Result<Self> {
        if !psnr.is_finite() {
            return Err(Error::invalid(format!("psnr must be finite, got {psnr}")));
        }
        if !(runtime > 0.0) || !runtime.is_finite() {
            return Err(Error::invalid(format!("runtime must be positive, got {runtime}")));
        }
        Ok(ScoreInputs { psnr, runtime })
    }
}

/// Challenge score trading fidelity against latency:
/// `PSNR + alpha * (0.2 - clip(runtime))` with `alpha = 20` for runtimes up
/// to 0.2 s and `0.5` beyond, and `clip` saturating to `[0.03, 5]` seconds.
pub fn mai_score(s: ScoreInputs) -> f64 {
    let alpha = if s.runtime <= 0.2 { 20.0 } else { 0.5 };
    let clipped = s.runtime.clamp(0.03, 5.0);
    s.psnr + alpha * (0.2 - clipped)
}
