use rand::SeedableRng;

/// The engine's random generator. ChaCha is counter based, so a stream is a
/// pure function of its seed.
pub type EngineRng = rand_chacha::ChaCha8Rng;

pub fn engine_rng(seed: u64) -> EngineRng {
    EngineRng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream identifier (SplitMix64 finalizer), giving
/// independent per-record or per-epoch streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
