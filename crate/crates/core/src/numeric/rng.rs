use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

/// Seeded, platform-independent random source. Single-owner; pass `&mut` explicitly.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a sub-task (sweep cell, per-state simulation, ...).
    pub fn derived(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Rng { inner: rng }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `(0, 1]`.
    pub fn uniform_open_closed(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Log-normal multiplier with median 1.
    pub fn lognormal(&mut self, sigma: f64) -> f64 {
        LogNormal::new(0.0, sigma)
            .expect("sigma must be finite and non-negative")
            .sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        rand_distr::Normal::new(mean, std)
            .expect("std must be finite and non-negative")
            .sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n`, uniformly without replacement, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k).into_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = Rng::derived(7, 0);
        let mut b = Rng::derived(7, 1);
        let va: Vec<u64> = (0..8).map(|_| a.uniform().to_bits()).collect();
        let vb: Vec<u64> = (0..8).map(|_| b.uniform().to_bits()).collect();
        assert_ne!(va, vb);
    }

    #[test]
    fn open_closed_never_zero() {
        let mut r = Rng::new(1);
        for _ in 0..10_000 {
            let v = r.uniform_open_closed();
            assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn pinned_first_draw() {
        // Guards against silent generator changes across dependency upgrades.
        let mut r = Rng::new(0);
        assert_eq!(r.uniform().to_bits(), 0x3fe6_b0be_ecf4_f347);
    }
}
