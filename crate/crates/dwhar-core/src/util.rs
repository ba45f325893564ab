//! Small shared helpers: hashing, seed derivation, canonical summation.

/// FNV-1a 64-bit hash. Used for config digests and seed stream derivation;
/// stability across builds matters more than collision resistance here.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives an independent RNG seed for a named purpose from a base seed, so
/// e.g. weight init and epoch shuffling never consume the same stream.
pub fn seed_stream(seed: u64, tag: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + tag.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(tag.as_bytes());
    fnv1a64(&bytes)
}

/// Sums addends in a canonical order (ascending by `total_cmp`), making the
/// result a pure function of the addend multiset. Reductions over axes that
/// permutation invariants cover (sensor tokens, variables within a channel)
/// use this so reordered inputs reproduce bitwise-identical outputs.
pub fn canonical_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}
