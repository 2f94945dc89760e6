//! Counter-based random streams.
//!
//! Trial `i` of a run draws from ChaCha8 keyed by the run seed with stream id
//! `i`, so its randomness is a pure function of `(seed, i)` and does not
//! depend on how trials are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-trial RNG handed to samplers.
pub type TrialRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamFactory {
    key: [u8; 32],
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = seed;
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        StreamFactory { key }
    }

    /// Independent stream for trial `index`.
    pub fn stream(&self, index: u64) -> TrialRng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }
}

/// Derives a child seed for a labelled sub-run (e.g. one row of a sweep).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut state = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    splitmix64(&mut state)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
