//! Deterministic per-run, per-loop random streams.
//!
//! Every loop draws from its own stream per purpose, so adding loops or
//! switching scheduler leaves the other loops' channel and plant noise
//! untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Channel = 1,
    PlantNoise = 2,
    ReceiverNoise = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// Seed of run `run` within an experiment.
pub fn run_seed(master_seed: u64, run: usize) -> u64 {
    mix(master_seed, run as u64)
}

pub fn stream(run_seed: u64, system: usize, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(run_seed, system as u64), purpose as u64))
}
