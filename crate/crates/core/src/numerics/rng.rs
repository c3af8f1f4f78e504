use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::Tensor;

/// Seeded, platform-stable pseudo-random stream.
///
/// Named sub-streams ([`Rng::substream`]) let independent consumers (dataset,
/// initialization, shuffling) draw from one root seed without interfering.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives a seed from this stream's seed and a label.
    pub fn derive_seed(seed: u64, label: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(label.as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn substream(&self, label: &str) -> Rng {
        Rng::new(Self::derive_seed(self.seed, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        Uniform::new(low, high)
            .expect("finite, ordered bounds")
            .sample(&mut self.inner)
    }

    /// Uniform draw from `[low, high]`.
    pub fn uniform_inclusive(&mut self, low: f64, high: f64) -> f64 {
        Uniform::new_inclusive(low, high)
            .expect("finite, ordered bounds")
            .sample(&mut self.inner)
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], low: f64, high: f64) -> Tensor {
        let n = shape.iter().product();
        let dist = Uniform::new(low, high).expect("finite, ordered bounds");
        let data = (0..n).map(|_| dist.sample(&mut self.inner)).collect();
        Tensor::new(shape, data).expect("length matches shape")
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Bernoulli draw with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform(0.0, 1.0) < p
    }
}
