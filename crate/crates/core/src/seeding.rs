//! Deterministic seed derivation.
//!
//! Everything random in this crate flows from one master `u64` seed. When a
//! component needs its own independent stream (one per proto-policy module,
//! one per task, one per epoch, ...) it derives a child seed with
//! [`derive`] instead of sharing an RNG, so the draw order of one component
//! can never perturb another.

/// SplitMix64 finaliser: a cheap, well-mixed bijection on `u64`.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the child seed for `stream` from a master `seed`. Pure and
/// deterministic: the same pair always yields the same child.
pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0x6A09_E667_F3BC_C909)))
}
