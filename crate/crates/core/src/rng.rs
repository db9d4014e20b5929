//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by the
//! master seed and positioned on a stream id derived from the draw's purpose
//! and coordinates. Changing one purpose (say, the treatment model) never
//! shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Covariates = 1,
    Treatment = 2,
    Outcome = 3,
    Subsample = 4,
    Matching = 5,
    Oracle = 6,
}

/// Coordinates of one stream under a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub purpose: Purpose,
    /// Cohort index (0 for the base cohort, replicate or MC cohort index otherwise).
    pub cohort: u64,
    /// Replicate index within an experiment.
    pub replicate: u64,
    /// Free slot, e.g. the scenario a matching order belongs to.
    pub extra: u64,
}

impl StreamKey {
    pub fn new(purpose: Purpose) -> Self {
        Self {
            purpose,
            cohort: 0,
            replicate: 0,
            extra: 0,
        }
    }

    pub fn cohort(mut self, index: u64) -> Self {
        self.cohort = index;
        self
    }

    pub fn replicate(mut self, index: u64) -> Self {
        self.replicate = index;
        self
    }

    pub fn extra(mut self, value: u64) -> Self {
        self.extra = value;
        self
    }

    fn stream_id(&self) -> u64 {
        let mut h = splitmix64(self.purpose as u64);
        h = splitmix64(h ^ self.cohort);
        h = splitmix64(h ^ self.replicate);
        splitmix64(h ^ self.extra)
    }
}

/// Builds the generator for `key` under `master_seed`.
pub fn stream(master_seed: u64, key: StreamKey) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(key.stream_id());
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
