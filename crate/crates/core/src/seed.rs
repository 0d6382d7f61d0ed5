//! Hierarchical seeding: every random stream is derived from one root seed
//! plus a stream label, so turning one component on or off never reshuffles
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a stream label into `root`. FNV-1a over the label, finished with
/// the splitmix64 avalanche.
pub fn derive(root: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(root ^ splitmix(h))
}

pub fn derive_n(root: u64, stream: &str, n: u64) -> u64 {
    splitmix(derive(root, stream) ^ splitmix(n.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

pub fn rng(root: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stream))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
