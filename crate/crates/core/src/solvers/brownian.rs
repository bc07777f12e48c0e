use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Pre-drawn Brownian increments for one posterior sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    pub seed: u64,
    pub dt: f64,
    /// `[num_steps, dim]`, each entry `~ N(0, dt)`.
    pub increments: Tensor,
}

impl BrownianPath {
    pub fn empty(seed: u64) -> Self {
        BrownianPath {
            seed,
            dt: 0.0,
            increments: Tensor::zeros(&[0, 0]),
        }
    }

    pub fn num_steps(&self) -> usize {
        self.increments.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.increments.shape()[1]
    }

    pub fn step(&self, k: usize) -> &[f64] {
        self.increments.row_slice(k)
    }

    /// Total number of scalar Gaussian draws held by the path.
    pub fn draws(&self) -> usize {
        self.increments.len()
    }
}

/// Draws `num_steps × dim` i.i.d. `N(0, dt)` increments from a ChaCha8
/// stream seeded with `seed`.
pub fn sample_brownian(seed: u64, num_steps: usize, dim: usize, dt: f64) -> Result<BrownianPath> {
    if num_steps == 0 || dim == 0 {
        return Ok(BrownianPath {
            seed,
            dt,
            increments: Tensor::zeros(&[num_steps, dim]),
        });
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Contract(format!("Brownian step size must be positive, got {dt}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = dt.sqrt();
    let data = (0..num_steps * dim)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            scale * z
        })
        .collect();
    Ok(BrownianPath {
        seed,
        dt,
        increments: Tensor::new(vec![num_steps, dim], data)?,
    })
}

/// Independent seed for posterior sample `index` of a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_is_empty() {
        let p = sample_brownian(1, 0, 3, 0.1).unwrap();
        assert_eq!(p.num_steps(), 0);
        assert_eq!(p.draws(), 0);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = sample_brownian(42, 50, 3, 0.02).unwrap();
        let b = sample_brownian(42, 50, 3, 0.02).unwrap();
        let bits = |p: &BrownianPath| p.increments.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = sample_brownian(43, 50, 3, 0.02).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn increment_moments() {
        let n = 100_000;
        let dt = 0.01;
        let p = sample_brownian(7, n, 1, dt).unwrap();
        let xs = p.increments.data();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 * dt.sqrt() / (n as f64).sqrt(), "mean {mean}");
        assert!((var - dt).abs() < 0.05 * dt, "var {var}");
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(5, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
