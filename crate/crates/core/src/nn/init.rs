use rand::Rng;

use super::conv::ConvLayer;
use super::scalar::Scalar;

/// Fan-in bound `1 / sqrt(c_in * F * F)`.
pub fn fan_in_bound(c_in: usize, filter: usize) -> f64 {
    1.0 / ((c_in * filter * filter) as f64).sqrt()
}

/// Draws weights and biases uniformly from `(-b, b)` with the fan-in bound.
pub fn init_conv<T: Scalar, R: Rng>(layer: &mut ConvLayer<T>, rng: &mut R) {
    let bound = fan_in_bound(layer.c_in(), layer.filter());
    for w in layer.weights.as_mut_slice() {
        *w = T::from_f64(rng.random_range(-bound..bound));
    }
    for b in &mut layer.bias {
        *b = T::from_f64(rng.random_range(-bound..bound));
    }
}
