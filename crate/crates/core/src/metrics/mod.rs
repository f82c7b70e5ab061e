//! Training losses, image-quality metrics and the challenge score.

mod composite;
mod losses;
mod score;
pub mod ssim;

pub use composite::{composite_loss, LossKind, LossSpec};
pub use losses::{charbonnier, l1, mse, LossValue, CHARBONNIER_EPS};
pub use score::{mai_score, ScoreInputs};
pub use ssim::{ms_ssim, ssim};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

pub const PSNR_CAP: f64 = 100.0;

/// Peak signal-to-noise ratio in dB, `10 log10(max² / MSE)`, saturating at
/// `cap` for (near-)identical inputs.
pub fn psnr_with<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, max_val: f64, cap: f64) -> Result<f64> {
    losses::check_pair("psnr", pred, target)?;
    let mse: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / pred.len() as f64;
    let peak = max_val * max_val;
    if mse < peak * 10f64.powf(-cap / 10.0) {
        Ok(cap)
    } else {
        Ok(10.0 * (peak / mse).log10())
    }
}

pub fn psnr<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    psnr_with(pred, target, 1.0, PSNR_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_reference_points() {
        let x: Tensor = Tensor::uniform((1, 3, 8, 8), 0.0, 1.0, 1);
        assert_eq!(psnr(&x, &x).unwrap(), 100.0);
        let z: Tensor<f64> = Tensor::zeros((1, 3, 8, 8));
        let o: Tensor<f64> = Tensor::ones((1, 3, 8, 8));
        assert!(psnr(&z, &o).unwrap().abs() < 1e-12);
        let a: Tensor<f64> = Tensor::fill((1, 3, 8, 8), 0.6);
        let b: Tensor<f64> = Tensor::fill((1, 3, 8, 8), 0.5);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }
}
