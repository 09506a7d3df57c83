//! Synthetic inputs for experiments.
//!
//! Post-ReLU activations are drawn from a discretized half-normal so that they
//! pile up at small values; weights are uniform over the 4-bit range.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::encoding::{MAX_ACT, MAX_WEIGHT_MAG};

/// `round(|N(0, scale)|)`, clamped to the 4-bit activation range.
pub fn relu_act<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> u8 {
    let z: f64 = rng.sample(StandardNormal);
    (z.abs() * scale).round().min(MAX_ACT as f64) as u8
}

pub fn relu_acts<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| relu_act(scale, rng)).collect()
}

pub fn uniform_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<i32> {
    let m = MAX_WEIGHT_MAG as i32;
    (0..n).map(|_| rng.random_range(-m..=m)).collect()
}

pub fn uniform_acts<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..=MAX_ACT)).collect()
}

pub fn dot(acts: &[u8], weights: &[i32]) -> i64 {
    acts.iter().zip(weights).map(|(&a, &w)| a as i64 * w as i64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn relu_acts_concentrate_at_small_values() {
        let mut rng = stream(2, 0);
        let acts = relu_acts(100_000, 3.0, &mut rng);
        assert!(acts.iter().all(|&a| a <= 15));
        let small = acts.iter().filter(|&&a| a <= 4).count() as f64 / acts.len() as f64;
        assert!(small > 0.8, "{small}");
        assert!(acts.iter().any(|&a| a == 0));
    }

    #[test]
    fn weights_cover_the_range() {
        let mut rng = stream(2, 1);
        let ws = uniform_weights(10_000, &mut rng);
        assert_eq!(*ws.iter().min().unwrap(), -7);
        assert_eq!(*ws.iter().max().unwrap(), 7);
    }
}
