//! Per-path random streams.
//!
//! Every path owns a generator derived from `(seed, domain, path_index)`
//! through a ChaCha8 block function keyed by the seed, with the path index as
//! the stream id. The derived 256-bit state seeds a xoshiro256++ generator
//! that produces the path's draws. A path's numbers therefore never depend on
//! which worker or batch simulated it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type PathRng = Xoshiro256PlusPlus;

/// Independent families of streams drawn from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamDomain {
    /// Gaussian increments of the path.
    Increments = 0,
    /// Auxiliary uniforms (Brownian-bridge maxima, mixture indices).
    Auxiliary = 1,
}

const DOMAIN_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Generator for path `index` in stream family `domain`.
pub fn path_rng(seed: u64, domain: StreamDomain, index: u64) -> PathRng {
    let key = seed ^ (domain as u64).wrapping_mul(DOMAIN_SALT);
    let mut chacha = ChaCha8Rng::seed_from_u64(key);
    chacha.set_stream(index);
    let mut state = [0u8; 32];
    chacha.fill_bytes(&mut state);
    Xoshiro256PlusPlus::from_seed(state)
}
