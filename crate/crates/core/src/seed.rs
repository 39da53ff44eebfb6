//! Deterministic seed derivation so every scene, sparse set, member and
//! episode gets an independent stream from one base seed.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and an index.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(stream)) ^ index)
}

pub(crate) mod stream {
    pub const SCENE: u64 = 1;
    pub const SPARSE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const EPISODE: u64 = 5;
    pub const MEMBER: u64 = 6;
}
