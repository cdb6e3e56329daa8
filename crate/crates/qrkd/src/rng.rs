//! Deterministic random-number streams.
//!
//! Every randomized routine takes an explicit `u64` seed and derives child
//! seeds for its independent pieces of work (one per Monte Carlo
//! replication, one per pivotal draw) through a SplitMix64 finalizer. Each
//! piece then runs its own ChaCha8 generator, so results never depend on
//! execution order or on the number of worker threads.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives an independent child seed from a root seed and an integer label.
///
/// Uses the SplitMix64 finalizer on both inputs; distinct labels give
/// effectively independent 64-bit seeds.
pub fn child_seed(root: u64, label: u64) -> u64 {
    splitmix64(root ^ splitmix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Creates the ChaCha8 generator for the given seed.
pub fn generator(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `n` independent standard normal variates.
///
/// Uses the Box-Muller transform on generator uniforms: with `u1` drawn in
/// `(0, 1]` and `u2` in `[0, 1)`, the pair
/// `sqrt(-2 ln u1) * (cos(2 pi u2), sin(2 pi u2))` is standard bivariate
/// normal. For odd lengths the second member of the last pair is discarded.
pub fn fill_standard_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos());
        if out.len() < n {
            out.push(r * theta.sin());
        }
    }
    out
}

/// Draws `n` independent uniforms on `[0, 1)`.
pub fn fill_uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}
