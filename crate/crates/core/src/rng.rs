//! Seeded random streams.
//!
//! Every consumer of randomness takes a named stream derived from one run
//! seed. A stream is a `Xoshiro256PlusPlus` whose state is expanded with
//! SplitMix64 from `seed ^ fnv1a(name)`, so adding a new stream never shifts
//! the numbers an existing one produces.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Stream = Xoshiro256PlusPlus;

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent stream `name` of run `seed`.
pub fn stream(seed: u64, name: &str) -> Stream {
    Xoshiro256PlusPlus::seed_from_u64(seed ^ fnv1a(name))
}

pub fn normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normals(rng: &mut Stream, len: usize, std: f64) -> Vec<f64> {
    (0..len).map(|_| std * normal(rng)).collect()
}
