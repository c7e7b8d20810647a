use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates `(seed, stream)` pairs.
pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, stream))
}

/// Stream ids, so independent consumers of one seed never share a sequence.
pub mod stream {
    pub const PARTITION: u64 = 1 << 40;
    pub const SUBGRAPH: u64 = 2 << 40;
    pub const INIT: u64 = 3 << 40;
    pub const DROPOUT: u64 = 4 << 40;
    pub const NEGATIVE: u64 = 5 << 40;
    pub const BFS: u64 = 6 << 40;
    pub const EVAL: u64 = 7 << 40;
    pub const FIXTURE: u64 = 8 << 40;
    pub const GROW: u64 = 9 << 40;
}
