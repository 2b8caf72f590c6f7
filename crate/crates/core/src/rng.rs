//! Reproducible per-replica random streams.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Independent stream `replica` of base seed `seed`.
///
/// Results depend only on `(seed, replica)`, never on thread scheduling.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}
