//! Reproducible random-number streams.
//!
//! A stream is identified by `(seed, stream_id)`; replications shard by
//! `stream_id` so that serial and parallel runs draw identical numbers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream sharing this seed, for sub-task `id`.
    pub fn fork(&self, id: u64) -> Self {
        Self::new(self.seed, id)
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn exp1(&mut self) -> f64 {
        Exp1.sample(&mut self.inner)
    }

    /// Gamma draw with the given shape and rate.
    pub fn gamma(&mut self, shape: f64, rate: f64) -> f64 {
        Gamma::new(shape, 1.0 / rate)
            .expect("gamma parameters must be positive")
            .sample(&mut self.inner)
    }

    /// Bernoulli(p) with p clamped to [0, 1].
    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p >= 1.0 {
            // Still consume a draw so acceptance loops replay identically.
            let _ = self.uniform();
            return true;
        }
        self.uniform() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_is_bitwise() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..1000 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        assert_eq!(a.word_pos(), b.word_pos());
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::new(7, 0);
        let mut b = RngStream::new(7, 1);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
        let mut c = RngStream::new(8, 0);
        assert_ne!(xa[0], c.next_u64());
    }

    #[test]
    fn fork_matches_fresh_stream() {
        let base = RngStream::new(11, 0);
        let mut f = base.fork(5);
        let mut g = RngStream::new(11, 5);
        assert_eq!(f.next_u64(), g.next_u64());
        assert_eq!(f.stream_id(), 5);
        assert_eq!(f.seed(), 11);
    }
}
