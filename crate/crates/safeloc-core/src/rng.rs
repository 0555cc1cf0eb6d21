//! Deterministic, splittable seeding.
//!
//! Every stochastic consumer derives its own seed from `(master, label)` so
//! that parallel scheduling cannot change results. Labels are stable strings
//! like `"round/3"` or `"client/client-01"`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a stable label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut state = splitmix64(master ^ 0x5341_4645_4C4F_4331);
    for &byte in label.as_bytes() {
        state = splitmix64(state ^ u64::from(byte));
    }
    state
}

/// A ChaCha generator seeded from `(master, label)`.
pub fn seeded_rng(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label))
}
