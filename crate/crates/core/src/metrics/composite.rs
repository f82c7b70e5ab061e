use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::{charbonnier, l1, ms_ssim, mse, ssim, LossValue, CHARBONNIER_EPS};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    L1,
    Mse,
    Charbonnier,
    Ssim,
    MsSsim,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::L1,
        LossKind::Mse,
        LossKind::Charbonnier,
        LossKind::Ssim,
        LossKind::MsSsim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::Mse => "mse",
            LossKind::Charbonnier => "charbonnier",
            LossKind::Ssim => "ssim",
            LossKind::MsSsim => "ms_ssim",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = LossKind::ALL.iter().map(|k| k.name()).collect();
            Error::invalid(format!("unknown loss `{s}`; valid kinds: {}", valid.join(", ")))
        })
    }
}

/// Weighted sum of loss terms. Similarity terms enter as `1 - similarity`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossSpec {
    terms: Vec<(LossKind, f64)>,
}

impl LossSpec {
    pub fn new(terms: Vec<(LossKind, f64)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("loss spec needs at least one term"));
        }
        if let Some((k, w)) = terms.iter().find(|(_, w)| !w.is_finite()) {
            return Err(Error::invalid(format!("non-finite weight {w} for {}", k.name())));
        }
        Ok(LossSpec { terms })
    }

    pub fn single(kind: LossKind) -> Self {
        LossSpec {
            terms: vec![(kind, 1.0)],
        }
    }

    pub fn terms(&self) -> &[(LossKind, f64)] {
        &self.terms
    }
}

/// Parses `kind:weight[,kind:weight...]`, e.g. `charbonnier:1.0,ssim:0.5`.
impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let terms = s
            .split(',')
            .map(|part| {
                let (kind, weight) = part
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| Error::invalid(format!("expected kind:weight, got `{part}`")))?;
                let weight: f64 = weight
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad weight `{weight}`")))?;
                Ok((kind.trim().parse()?, weight))
            })
            .collect::<Result<Vec<_>>>()?;
        LossSpec::new(terms)
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, w)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", k.name(), w)?;
        }
        Ok(())
    }
}

pub fn composite_loss<T: Scalar>(spec: &LossSpec, pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossValue<T>> {
    let mut value = 0.0;
    let mut grad = vec![T::zero(); pred.len()];
    for &(kind, weight) in &spec.terms {
        let (v, sign) = match kind {
            LossKind::L1 => (l1(pred, target)?, 1.0),
            LossKind::Mse => (mse(pred, target)?, 1.0),
            LossKind::Charbonnier => (charbonnier(pred, target, CHARBONNIER_EPS)?, 1.0),
            LossKind::Ssim => (ssim(pred, target)?, -1.0),
            LossKind::MsSsim => (ms_ssim(pred, target)?, -1.0),
        };
        value += weight * if sign > 0.0 { v.value } else { 1.0 - v.value };
        let scale = T::of(sign * weight);
        for (g, &d) in grad.iter_mut().zip(v.grad.data()) {
            *g += scale * d;
        }
    }
    Ok(LossValue {
        value,
        grad: Tensor::from_parts(pred.shape(), grad),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let spec: LossSpec = "charbonnier:1.0, ssim:0.5".parse().unwrap();
        assert_eq!(spec.terms(), &[(LossKind::Charbonnier, 1.0), (LossKind::Ssim, 0.5)]);
        assert_eq!(spec.to_string().parse::<LossSpec>().unwrap(), spec);
    }

    #[test]
    fn bogus_kind_lists_valid_kinds() {
        let err = "bogus:1".parse::<LossSpec>().unwrap_err().to_string();
        assert!(err.contains("charbonnier") && err.contains("ms_ssim"), "{err}");
        assert!("".parse::<LossSpec>().is_err());
        assert!("l1:nan".parse::<LossSpec>().is_err());
    }

    #[test]
    fn single_l1_equals_l1() {
        let a: Tensor = Tensor::uniform((1, 3, 12, 12), 0.0, 1.0, 1);
        let b: Tensor = Tensor::uniform((1, 3, 12, 12), 0.0, 1.0, 2);
        let c = composite_loss(&LossSpec::single(LossKind::L1), &a, &b).unwrap();
        let d = l1(&a, &b).unwrap();
        assert_eq!(c.value, d.value);
        assert_eq!(c.grad.data(), d.grad.data());
        let s = composite_loss(&LossSpec::single(LossKind::Ssim), &a, &a).unwrap();
        assert!(s.value.abs() < 1e-12);
    }
}
