use super::scalar::Scalar;
use crate::tensor::Tensor4;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// `x` for positive inputs, `slope * x` otherwise.
pub fn leaky_relu<T: Scalar>(x: &Tensor4<T>, slope: T) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

/// Gradient through [`leaky_relu`] evaluated at `x`. The subgradient at 0 is `slope`.
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor4<T>, grad_out: &Tensor4<T>, slope: T) -> Tensor4<T> {
    debug_assert_eq!(x.shape(), grad_out.shape());
    let data = x
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&v, &g)| if v > T::zero() { g } else { slope * g })
        .collect();
    Tensor4::from_vec(x.shape(), data).expect("same shape")
}
