//! Deterministic sub-seed derivation so one run seed drives independent
//! random streams (data generation, splitting, training).

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a sub-seed for the given stream from a base seed. Different
/// streams of the same base are decorrelated; equal inputs always produce
/// equal outputs.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base) ^ splitmix64(stream))
}

/// Stream tags used by the experiment runner.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const TRAIN: u64 = 3;
}
