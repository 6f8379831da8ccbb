//! Deterministic seeding and the sample stream used by every builtin
//! generator.
//!
//! The scheme is normative: external peers reproduce it to return
//! bit-identical samples.
//!
//! ```text
//! GAMMA      = 0x9E3779B97F4A7C15
//! mix(z):      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!              z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!              z ^ (z >> 31)
//! derive(s, k) = mix(s + GAMMA * (k + 1))                  (wrapping u64)
//!
//! position seed   = derive(global_seed, position)
//! stream output i = mix(seed + GAMMA * (i + 1))             (SplitMix64)
//! uniform draw  u = ((output >> 11) + 1) * 2^-53            (u in (0, 1])
//! ```
//!
//! Because SplitMix64 is counter based, the stream that starts at offset `o`
//! of seed `s` is the stream of seed `s + GAMMA * o`. Batches of one
//! position's samples use [`jump`] so that any batching of `N` draws
//! reproduces `sample_next(prefix, N, seed)` exactly.

/// Weyl increment of SplitMix64.
pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed used by the CLI when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_190_601;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed number `key` of `seed`.
#[inline]
pub fn derive(seed: u64, key: u64) -> u64 {
    mix64(seed.wrapping_add(GAMMA.wrapping_mul(key.wrapping_add(1))))
}

/// Seed of the stream that starts `offset` draws into the stream of `seed`.
#[inline]
pub fn jump(seed: u64, offset: u64) -> u64 {
    seed.wrapping_add(GAMMA.wrapping_mul(offset))
}

/// Stream seed for evaluation position `position` under `global_seed`.
#[inline]
pub fn position_seed(global_seed: u64, position: u64) -> u64 {
    derive(global_seed, position)
}

/// SplitMix64 sample stream.
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
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in `(0, 1]` with 53 bits of resolution.
    #[inline]
    pub fn next_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
