use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Seedable, splittable random source.
///
/// Backed by ChaCha8 with the stream id mapped onto the cipher's stream
/// counter, so `(seed, stream)` pairs give disjoint reproducible sequences.
/// Replicates and chains take `stream = replicate index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    core: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut core = ChaCha8Rng::seed_from_u64(seed);
        core.set_stream(stream);
        Self { seed, stream, core }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Fresh source on the same seed with a different stream id.
    pub fn split(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        loop {
            let u = (self.core.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.core.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.core.fill_bytes(dst)
    }
}
