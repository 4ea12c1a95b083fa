//! Seeded randomness.
//!
//! All random draws come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded via
//! `SeedableRng::seed_from_u64`. ChaCha8's output stream is fixed by its
//! published algorithm, so seeds reproduce across platforms. Integer and
//! unit-interval draws are derived here from raw `next_u64` output instead of
//! `rand`'s sampling helpers, whose algorithms may change between releases.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sub-seed for trial `trial` of a run seeded with `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_add(trial as u64)
}

/// Uniform integer in `[0, n)` by rejection sampling. `n` must be positive.
pub fn below(rng: &mut impl RngCore, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as u64;
    // largest multiple of n that fits in u64
    let zone = u64::MAX - (u64::MAX % n + 1) % n;
    loop {
        let x = rng.next_u64();
        if x <= zone {
            return (x % n) as usize;
        }
    }
}

/// Uniform `f64` in `[0, 1)` with 53 random bits.
pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Fisher-Yates shuffle, walking from the back.
pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}
