//! Named, derived random streams.
//!
//! Every source of randomness in a run is derived from one master seed plus a
//! stream name and index, so that adding a consumer never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA_SHUFFLE: &str = "data-shuffle";
pub const INIT: &str = "init";
pub const INIT_SGD: &str = "init-sgd";
pub const MASK: &str = "mask";
pub const CHAIN_NOISE: &str = "chain-noise";
pub const PRUNE_TRAIN: &str = "prune-train";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for stream `name`/`index` under `master`.
pub fn derive_seed(master: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the stream name
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(master ^ h).wrapping_add(splitmix64(index)))
}

pub fn stream(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, name, index))
}
