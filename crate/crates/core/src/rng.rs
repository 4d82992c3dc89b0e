use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stateless seed derivation: every random stream is keyed by the run seed
/// plus a purpose path, so a resumed run draws exactly what a fresh run would.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng_for(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// Purpose tags used as the first element of a seed path.
pub mod purpose {
    pub const NEGATIVES: u64 = 1;
    pub const BASE_INIT: u64 = 2;
    pub const BASE_SHUFFLE: u64 = 3;
    pub const META_INIT: u64 = 4;
    pub const META_SHUFFLE: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const PRETRAIN_SHUFFLE: u64 = 7;
}
