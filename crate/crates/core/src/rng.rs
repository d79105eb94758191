//! Seeded random streams.
//!
//! Every stochastic step takes an explicit generator. Independent concerns of a
//! run (data, split, init, regularizer subsets) get their own ChaCha stream so
//! that changing one never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags for [`stream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Shape = 1,
    Encode = 2,
    Split = 3,
    Init = 4,
    Subsets = 5,
    Estimator = 6,
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for `purpose` under the experiment seed `seed`.
pub fn stream(seed: u64, purpose: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}
