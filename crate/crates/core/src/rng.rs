//! Seeded RNG stream keying.
//!
//! Every random draw in the solver comes from a ChaCha stream keyed by
//! `(seed, iteration, role)`. Streams across iterations and roles never
//! overlap, which makes oracle calls independent of evaluation order,
//! keeps parallel and serial execution bit-identical, and lets a resumed
//! run regenerate exactly the randomness it would have used.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Role of a random stream within one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    PoolBuild = 0,
    ParamInit = 1,
    OuterIndices = 2,
    GradDraws = 3,
    SmoothDraws = 4,
    SketchSubset = 5,
    Reservoir = 6,
    RotateDraws = 7,
    Scratch = 8,
}

/// ChaCha stream for `(seed, t, id)`. `t = 0` is reserved for run-level
/// setup (pool building, parameter init).
pub fn stream(seed: u64, t: u64, id: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t.wrapping_mul(16).wrapping_add(id as u64));
    rng
}
