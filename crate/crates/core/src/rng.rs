//! Pinned pseudo-random generator shared by the seeded sampler and test
//! fixtures. The algorithm (SplitMix64) is fixed by this crate, not by a
//! library default, so seeded draws are identical on every platform and
//! toolchain.

/// SplitMix64 stream. Reference sequence: Steele, Lea & Flood's
/// `splitmix64` with the canonical odd increment.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Draw from `0..bound` by modulo reduction. The slight modulo bias is
    /// acceptable for sampling and jitter; the reduction rule is part of the
    /// pinned algorithm.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        self.next_u64() % bound
    }
}
