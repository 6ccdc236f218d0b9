//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha stream derived from
//! the scenario seed, so adding draws in one subsystem never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Independent stream identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Lidar = 1,
    Marker = 2,
    Odometry = 3,
    Particles = 4,
    Face = 5,
    Ik = 6,
    Scenario = 7,
}

pub fn stream(seed: u64, stream: Stream) -> SimRng {
    // splitmix64 finalizer so that nearby seeds give unrelated streams
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    SimRng::seed_from_u64(z)
}
