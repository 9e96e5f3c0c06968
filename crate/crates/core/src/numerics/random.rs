use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::Tensor;

/// Seeded, platform-stable source of noise (ChaCha8 core).
///
/// Cloning a stream forks it: both copies continue with the same sequence.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, derived deterministically from this one.
    pub fn split(&mut self) -> RandomStream {
        RandomStream::new(self.rng.random())
    }

    pub fn normal(&mut self) -> f32 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_normal(&mut self, out: &mut [f32]) {
        for v in out {
            *v = StandardNormal.sample(&mut self.rng);
        }
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        self.rng.random_range(lo..hi)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }

    /// Tensor of i.i.d. standard normal samples.
    pub fn gaussian(&mut self, shape: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(shape);
        self.fill_normal(t.data_mut());
        t
    }

    /// Uniform random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}

/// Draws a tensor of i.i.d. standard normal samples, advancing `stream`.
pub fn gaussian(stream: &mut RandomStream, shape: &[usize]) -> Tensor {
    stream.gaussian(shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_samples() {
        let a = gaussian(&mut RandomStream::new(11), &[64]);
        let b = gaussian(&mut RandomStream::new(11), &[64]);
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = gaussian(&mut RandomStream::new(1), &[64]);
        let b = gaussian(&mut RandomStream::new(2), &[64]);
        assert_ne!(a, b);
    }

    #[test]
    fn moments_of_a_million_samples() {
        let t = gaussian(&mut RandomStream::new(2024), &[1_000_000]);
        let n = t.len() as f64;
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = RandomStream::new(3).permutation(17);
        p.sort_unstable();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
    }
}
