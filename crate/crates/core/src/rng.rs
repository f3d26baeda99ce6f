//! Counter-keyed, splittable random streams.
//!
//! Every random decision in the Monte Carlo draws from a [`Stream`] identified
//! by `(seed, domain, index)`: a pair's detection fate is keyed by its pair id,
//! a time block's emissions by the block index. Results are therefore a
//! function of the key alone and never of how work is partitioned across
//! threads or slabs.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood) started from a state
//! derived by hashing the key. Not cryptographic.

use rand::RngCore;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent sub-sequences used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Emission = 1,
    Detection = 2,
    DarkCounts = 3,
    Analyzer = 4,
    Acquisition = 5,
    Noise = 6,
    SubRun = 7,
}

/// Derive a child seed from `(seed, domain, index)`.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    let a = mix64(seed ^ GOLDEN_GAMMA);
    let b = mix64(a ^ (domain as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    mix64(b ^ index.wrapping_mul(GOLDEN_GAMMA).wrapping_add(0x8CB9_2BA7_2F3D_8DD7))
}

#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn new(seed: u64, domain: Domain, index: u64) -> Self {
        Self {
            state: derive_seed(seed, domain, index),
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`, safe to pass to `ln`.
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }
}

impl RngCore for Stream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
