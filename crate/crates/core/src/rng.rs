//! Reproducible random streams.
//!
//! Every particle gets its own ChaCha stream keyed by `(seed, round, index)`,
//! so results do not depend on the order in which particles are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Domain tags that keep streams for different purposes apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Langevin = 2,
    MonteCarlo = 3,
    Jitter = 4,
    Data = 5,
}

pub fn stream(seed: u64, purpose: Purpose, round: u64, index: u64) -> ChaCha8Rng {
    let mut k = splitmix64(seed);
    k = splitmix64(k ^ purpose as u64);
    k = splitmix64(k ^ round);
    k = splitmix64(k ^ index);
    ChaCha8Rng::seed_from_u64(k)
}

#[inline]
pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for x in out {
        *x = normal(rng);
    }
}
