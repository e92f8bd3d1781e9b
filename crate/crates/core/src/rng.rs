//! SplitMix64 streams and the stream-derivation scheme used for every random draw.
//!
//! All randomness in a run descends from one 64-bit seed. Child streams are
//! derived with [`derive_seed`], which mixes the parent seed with a
//! domain tag and an index path, so that adding a new consumer never shifts
//! the draws of an existing one.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Finalizer of SplitMix64.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-1, 1)`.
    #[inline]
    pub fn next_signed(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }

    /// Uniform integer in `0..n` (Lemire's widening multiply, slight bias is
    /// irrelevant at the sizes used here). Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Domain tags for stream derivation. Values are part of the on-disk
/// reproducibility contract; never renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    SftShuffle = 1,
    GrpoBatch = 2,
    GrpoRollout = 3,
    Evaluation = 4,
    SynthSlots = 5,
    SynthSplit = 6,
    Decode = 7,
}

/// Derive a child seed from `(seed, stream, path)`.
pub fn derive_seed(seed: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut h = mix64(seed ^ mix64(stream as u64 ^ GOLDEN_GAMMA));
    for &p in path {
        h = mix64(h.wrapping_add(GOLDEN_GAMMA) ^ mix64(p.wrapping_add(1)));
    }
    h
}
