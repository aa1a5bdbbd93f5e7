//! Seeded random streams.
//!
//! Backed by ChaCha8 (`rand_chacha`), whose output is specified bit-for-bit
//! and is independent of platform and endianness. A single user seed is fanned
//! out into independent streams with [`Rng::split`]: stream `k` of seed `s`
//! is ChaCha8 keyed by `s` with stream id `k`.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Stream ids used when fanning out the run seed.
pub mod streams {
    pub const SYNTH: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const DISC_INIT: u64 = 5;
}

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

    /// Independent stream derived from this generator's seed.
    pub fn split(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self {
            seed: self.seed,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..hi`.
    pub fn below(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..hi)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

/// I.i.d. standard normal tensor of the given shape.
pub fn gaussian_sample<S: Scalar>(rng: &mut Rng, shape: impl Into<Vec<usize>>) -> Tensor<S> {
    let shape = shape.into();
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::of(rng.normal())).collect();
    Tensor::new(shape, data).expect("length matches shape")
}
