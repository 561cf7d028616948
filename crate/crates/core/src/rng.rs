//! Deterministic random streams.
//!
//! Every random decision in the pipeline draws from a ChaCha8 stream keyed by
//! stable identifiers (global seed, sample id, sequence index, effect index),
//! never by thread identity, so outputs do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Builder for a stream key; each `with_*` call folds another component in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(global_seed: u64) -> Self {
        StreamKey(splitmix64(global_seed))
    }

    pub fn with_str(self, s: &str) -> Self {
        StreamKey(splitmix64(self.0 ^ fnv1a(s.as_bytes())))
    }

    pub fn with_index(self, i: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(i.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Shorthand for `StreamKey::new(seed).with_str(tag).rng()`.
pub fn stream(global_seed: u64, tag: &str) -> ChaCha8Rng {
    StreamKey::new(global_seed).with_str(tag).rng()
}
