use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Default Charbonnier smoothing constant.
pub const CHARBONNIER_EPS: f64 = 1e-3;

/// A scalar objective together with its gradient with respect to the
/// prediction.
#[derive(Clone, Debug)]
pub struct LossValue<T: Scalar = f32> {
    pub value: f64,
    pub grad: Tensor<T>,
}

pub(crate) fn check_pair<T: Scalar>(op: &'static str, pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: pred.shape(),
            right: target.shape(),
        });
    }
    if pred.is_empty() {
        return Err(Error::shape(op, "empty tensors"));
    }
    Ok(())
}

/// Mean of `f(pred - target)` with gradient `f'(d) / N`.
fn pointwise<T: Scalar>(
    op: &'static str,
    pred: &Tensor<T>,
    target: &Tensor<T>,
    f: impl Fn(f64) -> (f64, f64),
) -> Result<LossValue<T>> {
    check_pair(op, pred, target)?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (v, d) = f(p.as_f64() - t.as_f64());
            total += v;
            T::of(d / n)
        })
        .collect();
    let value = total / n;
    if !value.is_finite() {
        return Err(Error::NonFinite { op });
    }
    Ok(LossValue {
        value,
        grad: Tensor::from_parts(pred.shape(), grad),
    })
}

pub fn l1<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossValue<T>> {
    pointwise("l1", pred, target, |d| {
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        (d.abs(), s)
    })
}

pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossValue<T>> {
    pointwise("mse", pred, target, |d| (d * d, 2.0 * d))
}

/// `mean(sqrt(d² + eps²))`, a smooth stand-in for L1.
pub fn charbonnier<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Result<LossValue<T>> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::invalid(format!("charbonnier eps must be positive, got {eps}")));
    }
    pointwise("charbonnier", pred, target, |d| {
        let r = (d * d + eps * eps).sqrt();
        (r, d / r)
    })
}
