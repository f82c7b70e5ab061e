//! Differentiable layers. Each forward has an analytic backward counterpart;
//! [`crate::autograd::Tape`] wires them together.

pub mod conv;
mod pool;
mod shuffle;

pub use conv::{
    conv2d, conv2d_backward, conv2d_transposed, conv2d_transposed_backward, conv2d_transposed_with, conv2d_with,
    Conv2dParams, ConvGeometry, ConvGrads, ConvSpec, Padding,
};
pub use pool::{
    bilinear_up2, bilinear_up2_backward, global_avg_pool, global_avg_pool_backward, max_pool2, max_pool2_backward,
};
pub use shuffle::{pixel_shuffle, space_to_depth};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            // Saturated results round inward so the output stays in (0, 1).
            Activation::Sigmoid => {
                let y = T::one() / (T::one() + (-x).exp());
                let below_one = T::one() - T::epsilon() / T::of(2.0);
                y.max(T::min_positive_value()).min(below_one)
            }
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    x.map(|v| kind.apply(v)).checked(kind.name())
}

/// Input gradient of an activation given its output and upstream gradient.
pub fn activation_backward<T: Scalar>(output: &Tensor<T>, kind: Activation, grad_out: &[T]) -> Vec<T> {
    output
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&y, &g)| g * kind.derivative_from_output(y))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_sigmoid_values() {
        let x: Tensor = Tensor::from_vec((1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(activation(&x, Activation::Relu).unwrap().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(Activation::Sigmoid.apply(0.0f32), 0.5);
    }

    #[test]
    fn sigmoid_saturates_inside_open_interval() {
        for x in [20.0f32, 100.0, 1e4, f32::MAX] {
            let y = Activation::Sigmoid.apply(x);
            assert!(y < 1.0 && y > 0.999_999);
            let z = Activation::Sigmoid.apply(-x);
            assert!(z > 0.0 && z < 1e-6);
        }
        assert!(Activation::Sigmoid.apply(40.0f64) < 1.0);
    }

    #[test]
    fn tanh_derivative_at_zero() {
        let y = Activation::Tanh.apply(0.0f64);
        assert_eq!(Activation::Tanh.derivative_from_output(y), 1.0);
        let h = 1e-3;
        let fd = ((h as f64).tanh() - (-h as f64).tanh()) / (2.0 * h);
        assert!((fd - 1.0).abs() < 1e-6);
    }
}
