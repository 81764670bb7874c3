//! Seed splitting.
//!
//! Every random stream in a run is derived from one 64-bit seed. A stream is
//! the ChaCha8 generator seeded with that seed and positioned on stream id
//! `(purpose << 48) | index`, so streams never overlap and any consumer can be
//! reconstructed without replaying the others:
//!
//! | purpose        | index            | consumer                           |
//! |----------------|------------------|------------------------------------|
//! | `ModelInit`    | 0                | network weight initialisation      |
//! | `Episode`      | episode number   | rollouts, dropout, replay draws    |
//! | `WalkerInit`   | 0                | initial walker positions/momenta   |
//! | `Walker`       | walker index     | Langevin noise of one walker       |
//! | `Evaluation`   | eval point       | on-policy evaluation samples       |
//! | `Standalone`   | caller-chosen    | tests and one-off tools            |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    ModelInit = 1,
    Episode = 2,
    WalkerInit = 3,
    Walker = 4,
    Evaluation = 5,
    Standalone = 6,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    debug_assert!(index < (1 << 48));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | index);
    rng
}
