//! Named, independent random streams derived from one root seed.
//!
//! Every consumer of randomness (scene generation, rollouts, the detector
//! simulator) asks for its own ChaCha stream keyed by a name and an index, so
//! a component can be re-run in isolation and parallel work never shares a
//! generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit key for a stream name and index.
pub fn stream_key(name: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h ^ splitmix64(index))
}

/// Generator for stream `(name, index)` under `root_seed`.
pub fn stream(root_seed: u64, name: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(stream_key(name, index));
    rng
}

/// Derive a child seed, for APIs that take a plain `u64` seed.
pub fn derive_seed(root_seed: u64, name: &str, index: u64) -> u64 {
    splitmix64(root_seed ^ stream_key(name, index))
}
