//! Seedable, splittable random numbers.
//!
//! `SplitRng` is ChaCha8 (`rand_chacha::ChaCha8Rng`). A `u64` seed is
//! expanded to the 256-bit key with `SeedableRng::seed_from_u64`, and
//! [`SplitRng::split`] derives a child generator with the same key but a
//! different ChaCha stream id, so children are independent of each other
//! and of how many numbers the parent has drawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SplitRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        SplitRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream; identical for identical `(seed, stream)`.
    pub fn split(&self, stream: u64) -> SplitRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        SplitRng {
            seed: self.seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            inner,
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SplitRng::new(7);
        let mut b = SplitRng::new(7);
        let xs: Vec<f64> = (0..5).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..5).map(|_| b.uniform()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn split_is_independent_of_parent_draws() {
        let a = SplitRng::new(3);
        let mut b = SplitRng::new(3);
        b.uniform();
        assert_eq!(a.split(5).uniform(), b.split(5).uniform());
        assert_ne!(a.split(5).uniform(), a.split(6).uniform());
    }
}
