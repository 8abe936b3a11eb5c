//! Reproducible random streams for parallel ensembles.
//!
//! Each trajectory owns a ChaCha8 stream keyed by `(master_seed,
//! stream_index)`. ChaCha runs in counter mode, so the n-th draw of a stream
//! is a pure function of `(master_seed, stream_index, n)`: results do not
//! depend on which worker runs a trajectory or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream indices at or above this value are reserved for non-trajectory
/// consumers (bootstrap resampling, synthetic checks).
pub const RESERVED_STREAM_BASE: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self { master_seed, stream_index }
    }

    /// Stream for the `k`-th reserved auxiliary consumer.
    pub fn auxiliary(master_seed: u64, k: u64) -> Self {
        Self { master_seed, stream_index: RESERVED_STREAM_BASE + k }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }
}
