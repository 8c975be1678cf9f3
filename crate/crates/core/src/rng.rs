//! Deterministic per-image random streams.
//!
//! Every stochastic stage draws from a [`Stream`] derived from the triple
//! `(master_seed, category, image)`. The triple is folded into one 64-bit
//! stream seed with the SplitMix64 finalizer:
//!
//! ```text
//! s = fmix(fmix(fmix(master) ^ category * 0x9E3779B97F4A7C15) ^ image * 0xD1B54A32D192ED03)
//! ```
//!
//! and `s` seeds a ChaCha8 generator (`rand_chacha::ChaCha8Rng::seed_from_u64`).
//! The two multipliers differ, so swapping category and image changes the
//! seed. Nothing is global: deriving a stream twice gives the same sequence no
//! matter what else was derived in between.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CATEGORY_MUL: u64 = 0x9E37_79B9_7F4A_7C15;
const IMAGE_MUL: u64 = 0xD1B5_4A32_D192_ED03;

/// Reserved category indices for streams that are not tied to a dataset image.
pub mod purpose {
    pub const NET_INIT: u64 = u64::MAX;
    pub const TRAIN_SAMPLING: u64 = u64::MAX - 1;
    pub const VALIDATION: u64 = u64::MAX - 2;
    pub const BENCH_IMAGE: u64 = u64::MAX - 3;
    pub const SYNTH: u64 = u64::MAX - 4;
}

/// SplitMix64 output finalizer (a bijection on `u64`).
#[inline]
pub fn fmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SeedSpec {
    pub master_seed: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn stream_seed(&self, category: u64, image: u64) -> u64 {
        let a = fmix64(self.master_seed) ^ category.wrapping_mul(CATEGORY_MUL);
        fmix64(fmix64(a) ^ image.wrapping_mul(IMAGE_MUL))
    }

    pub fn derive(&self, category: u64, image: u64) -> Stream {
        derive_stream(*self, category, image)
    }
}

pub fn derive_stream(seed: SeedSpec, category: u64, image: u64) -> Stream {
    Stream {
        rng: ChaCha8Rng::seed_from_u64(seed.stream_seed(category, image)),
    }
}

/// Single-owner uniform generator.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    /// Uniform draw on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

impl rand::RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
