//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream addressed by
//! `(master seed, domain, run, step, index)`:
//!
//! * the 256-bit ChaCha key is the master seed expanded with SplitMix64;
//! * the 64-bit ChaCha stream id is the SplitMix64 hash chain of
//!   `domain, run, step, index`.
//!
//! A draw therefore depends only on its address, never on how many draws were
//! made before it or on which worker thread made them, so serial and parallel
//! schedules give bit-identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Part of the stream address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Truth = 1,
    Reference = 2,
    Resample = 3,
    SmoothBackward = 4,
    SmoothForward = 5,
    Candidate = 6,
    TableOneReference = 7,
    SigmaJitter = 8,
    SelfTest = 9,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed plus the run index it is being used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    key: [u8; 32],
    pub master: u64,
    pub run: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        let mut key = [0u8; 32];
        let mut s = master;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        Self {
            key,
            master,
            run: 0,
        }
    }

    /// Same master seed, different run.
    pub fn for_run(&self, run: u64) -> Self {
        Self { run, ..*self }
    }

    /// Generator for the address `(domain, self.run, step, index)`.
    pub fn rng(&self, domain: Domain, step: u64, index: u64) -> ChaCha8Rng {
        let mut id = splitmix64(domain as u64);
        id = splitmix64(id ^ self.run);
        id = splitmix64(id ^ step);
        id = splitmix64(id ^ index);
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(id);
        rng
    }
}
