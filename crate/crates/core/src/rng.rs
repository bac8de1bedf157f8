//! Seeded randomness. Every stochastic routine in the crate takes an explicit
//! generator so runs are reproducible from a single `u64` seed.

use alloc::vec::Vec;

use rand::{Rng as _, SeedableRng};

use crate::math;

/// The generator used throughout the engine.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// One step of the splitmix64 generator applied to state `x`.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps the top 53 bits of `bits` onto `[0, 1)`.
#[inline]
pub fn unit_from_bits(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Independent sub-seed for a named stream of a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn uniform(rng: &mut Rng) -> f64 {
    unit_from_bits(rand::RngCore::next_u64(rng))
}

/// Box-Muller; consumes two uniforms per call.
pub fn standard_normal(rng: &mut Rng) -> f64 {
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(core::f64::consts::TAU * u2)
}

pub fn uniform_index(rng: &mut Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

/// `k` distinct indices from `0..n`, uniformly without replacement, in draw order.
pub fn sample_indices(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k).into_vec()
}

pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference splitmix64 stream seeded with 0.
        let mut state = 0u64;
        let mut next = || {
            let out = splitmix64(state);
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            out
        };
        assert_eq!(next(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(next(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn unit_from_bits_range() {
        assert_eq!(unit_from_bits(0), 0.0);
        assert!(unit_from_bits(u64::MAX) < 1.0);
    }

    #[test]
    fn normal_moments() {
        let mut rng = seeded(3);
        let xs: Vec<f64> = (0..20_000).map(|_| standard_normal(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}
