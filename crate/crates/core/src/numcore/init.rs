use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use super::tensor::{Scalar, Tensor};

/// Uniform in `±1/√fan_in`, where `fan_in` is the row count of a weight
/// applied as `x · W`.
pub fn uniform_fan_in<T: Scalar, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = 1.0 / Float::sqrt(fan_in.max(1) as f64);
    uniform_symmetric(rng, vec![fan_in, fan_out], bound)
}

pub fn uniform_symmetric<T: Scalar, R: Rng>(rng: &mut R, shape: Vec<usize>, bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}
