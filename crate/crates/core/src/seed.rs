//! Named sub-seeds derived from one root seed.

/// Root seed used when none is given.
pub const DEFAULT_ROOT_SEED: u64 = 0;

/// Derives a component seed (`"init"`, `"dropout"`, `"griffin_lim"`, ...)
/// from the root seed with FNV-1a over the name followed by a SplitMix64
/// finaliser.
pub fn sub_seed(root: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(root ^ h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
