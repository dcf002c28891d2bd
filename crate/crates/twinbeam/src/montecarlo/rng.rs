//! Counter-based random number generation for reproducible parallelism.
//!
//! Every pulse gets its own generator keyed by `(seed, pulse_index,
//! stream)`, so the simulated tag content is a pure function of the
//! configuration and completely independent of how pulses are distributed
//! over worker threads. Streams separate independent concerns (photon
//! physics, dark counts, spectral sampling): toggling dark counts on or
//! off leaves the photon draws of every pulse untouched.
//!
//! The generator is the SplitMix64 sequence seeded through three rounds of
//! its own avalanche mixer; initialization is a handful of integer
//! operations, cheap enough to do ~10⁸ times per run.

use rand::RngCore;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent random stream for one `(seed, pulse, stream)` key.
#[derive(Debug, Clone)]
pub struct PulseRng {
    state: u64,
}

impl PulseRng {
    pub fn new(seed: u64, pulse_index: u64, stream: u64) -> Self {
        let mut key = mix64(seed ^ 0x5851_f42d_4c95_7f2d);
        key = mix64(key ^ pulse_index.wrapping_mul(GOLDEN_GAMMA));
        key = mix64(key ^ stream.wrapping_mul(0xd605_0b1c_37fa_95b1));
        Self { state: key }
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller on two uniforms.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        // open interval keeps the log finite
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / ((1u64 << 53) + 1) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

impl RngCore for PulseRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
