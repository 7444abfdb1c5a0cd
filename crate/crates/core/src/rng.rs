//! Portable seeded randomness.
//!
//! Every random stream in the simulator is a ChaCha20 generator
//! (`rand_chacha::ChaCha20Rng`) keyed with `SeedableRng::seed_from_u64`. Floats
//! are built from the top 53 bits of `next_u64`, so draws do not depend on the
//! sampling code of any distribution crate and are identical across platforms.
//!
//! Seeds for sub-streams are derived with [`stable_hash`]: FNV-1a (64-bit) over a
//! tagged byte encoding of the parts, followed by the SplitMix64 finaliser.
//! Both the encoding and the constants are fixed; changing them changes every
//! recorded seed.

use rand_chacha::ChaCha20Rng;
use rand_core::{Rng, SeedableRng};

#[derive(Clone, Debug)]
pub struct SimRng(ChaCha20Rng);

impl SimRng {
    pub fn from_seed(seed: u64) -> Self {
        SimRng(ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `true` with probability `p`. Always consumes exactly one draw.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Unbiased integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }
}

/// One component of a [`stable_hash`] key.
#[derive(Clone, Copy, Debug)]
pub enum HashPart<'a> {
    U64(u64),
    Str(&'a str),
}

impl From<u64> for HashPart<'_> {
    fn from(v: u64) -> Self {
        HashPart::U64(v)
    }
}

impl<'a> From<&'a str> for HashPart<'a> {
    fn from(s: &'a str) -> Self {
        HashPart::Str(s)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a sequence of parts.
///
/// Integers are encoded as tag `0x01` + 8 little-endian bytes; strings as tag
/// `0x02` + length (8 bytes LE) + UTF-8 bytes.
pub fn stable_hash(parts: &[HashPart<'_>]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    for part in parts {
        match *part {
            HashPart::U64(v) => {
                feed(&[0x01]);
                feed(&v.to_le_bytes());
            }
            HashPart::Str(s) => {
                feed(&[0x02]);
                feed(&(s.len() as u64).to_le_bytes());
                feed(s.as_bytes());
            }
        }
    }
    splitmix64_finalize(h)
}

/// Seed of a named sub-stream of `base`.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    stable_hash(&[HashPart::U64(base), HashPart::Str(label)])
}
