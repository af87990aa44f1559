//! Seeded weight initializers.
//!
//! Weights and biases follow the fan-in uniform rule used by the usual conv
//! and linear defaults: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.

use ndarray::ArrayD;
use rand::Rng;

/// Kaiming-style uniform initialization for weight tensors.
pub fn kaiming_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    bound_uniform(rng, shape, fan_in)
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` over the given shape.
pub fn bound_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    assert!(fan_in > 0, "fan_in must be positive");
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    ArrayD::from_shape_vec(ndarray::IxDyn(shape), data).expect("init shape")
}
