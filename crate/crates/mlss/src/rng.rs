//! Deterministic random number plumbing.
//!
//! Every stochastic component (fold shuffles, tree learners, simulated data)
//! derives its stream from a caller-supplied 64-bit seed through
//! [`derive_seed`], so results are reproducible bit-for-bit regardless of
//! execution order or thread count.

use rand::SeedableRng;
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

/// Mix a master seed with a stream index into an independent child seed.
///
/// Two SplitMix64 finalizer rounds; distinct `(master, stream)` pairs map to
/// well-separated states even for small consecutive indices.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream.wrapping_add(0x9E3779B97F4A7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// FNV-1a hash of a byte string, for deriving streams from stable names.
pub fn hash_name(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Seed a PCG-64 generator.
pub fn seed_rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

/// One standard normal draw.
pub fn standard_normal(rng: &mut Pcg64) -> f64 {
    rand::RngExt::sample(rng, StandardNormal)
}

/// One uniform draw on [0, 1).
pub fn uniform(rng: &mut Pcg64) -> f64 {
    rand::RngExt::random::<f64>(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_deterministic_and_spreads() {
        assert_eq!(derive_seed(7, 0), derive_seed(7, 0));
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    #[test]
    fn rng_streams_reproduce() {
        let mut a = seed_rng(123);
        let mut b = seed_rng(123);
        for _ in 0..50 {
            assert_eq!(standard_normal(&mut a).to_bits(), standard_normal(&mut b).to_bits());
        }
    }
}
