//! Counter-keyed random streams.
//!
//! Every trial gets its own ChaCha stream selected by `(master seed, purpose,
//! stream index)`, so the numbers a trial sees do not depend on how trials are
//! scheduled across workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// What a stream is used for; keeps noise and auxiliary draws independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Noise = 0,
    Smoothness = 1,
}

/// Stream index for trial `trial` at grid position `grid_index`.
pub fn stream_id(grid_index: usize, trial: usize) -> u64 {
    ((grid_index as u64) << 32) | (trial as u64 & 0xffff_ffff)
}

pub fn stream(master_seed: u64, purpose: Purpose, id: u64) -> ChaCha8Rng {
    let key = master_seed ^ (purpose as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(id);
    rng
}

/// `len` standard normal draws from the given stream.
pub fn standard_normals(master_seed: u64, purpose: Purpose, id: u64, len: usize) -> Vec<f64> {
    let mut rng = stream(master_seed, purpose, id);
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// A single uniform draw in `[0, 1)`.
pub fn uniform01(master_seed: u64, purpose: Purpose, id: u64) -> f64 {
    stream(master_seed, purpose, id).random::<f64>()
}
