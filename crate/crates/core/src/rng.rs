//! Seeded random streams.
//!
//! Every draw in the crate goes through [`SimRng`], a ChaCha8 generator
//! addressed by an explicit `(seed, stream)` pair. Standard normals come from
//! `rand_distr::StandardNormal` (ziggurat). Both choices are part of the
//! determinism contract: changing either changes every output file.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Address of a random stream. Identical states yield identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child stream `index` of this state; children of distinct parents or
    /// distinct indices never share a stream.
    pub fn fork(&self, index: u64) -> RngState {
        RngState {
            seed: splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x5eed))),
            stream: index,
        }
    }

    pub fn rng(&self) -> SimRng {
        SimRng::new(*self)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A generator that also counts how many standard normals it has produced.
#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
    normals: u64,
}

impl SimRng {
    pub fn new(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(state.seed);
        inner.set_stream(state.stream);
        Self { inner, normals: 0 }
    }

    pub fn normal(&mut self) -> f64 {
        self.normals += 1;
        self.inner.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.normal()).collect()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Number of standard-normal draws made so far.
    pub fn normals_drawn(&self) -> u64 {
        self.normals
    }
}
