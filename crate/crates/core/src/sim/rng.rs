use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};

use crate::hash::fnv1a64;

/// A named, seeded, counter-based random stream.
///
/// The ChaCha stream id is the FNV-1a hash of the label, so the value at a given
/// draw index depends only on `(seed, label, index)`. Each stochastic phenomenon
/// gets its own label; adding or removing one stream never shifts another's draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    label: String,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a64(label.as_bytes()));
        RngStream { label, seed, rng }
    }

    /// Child stream `label/sub`, independent of this stream's position.
    pub fn derive(&self, sub: impl std::fmt::Display) -> RngStream {
        RngStream::new(self.seed, format!("{}/{}", self.label, sub))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit draws consumed so far.
    pub fn position(&self) -> u64 {
        (self.rng.get_word_pos() / 2) as u64
    }

    /// Repositions the stream so the next draw is draw number `index`.
    pub fn seek(&mut self, index: u64) {
        self.rng.set_word_pos(index as u128 * 2);
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform01(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.rng.random_range(0..n)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        if sd == 0.0 {
            return mean;
        }
        Normal::new(mean, sd)
            .expect("finite normal parameters")
            .sample(&mut self.rng)
    }

    /// Log-normal draw parameterised by the underlying normal's `mu` and `sigma`.
    pub fn lognormal(&mut self, mu: f64, sigma: f64) -> f64 {
        LogNormal::new(mu, sigma)
            .expect("finite lognormal parameters")
            .sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
