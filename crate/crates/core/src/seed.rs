use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

// Stream tags keep differently purposed generators apart even under the same base seed.
pub const STREAM_SPLIT: u64 = 0x5350_4c49_54;
pub const STREAM_PARTITION: u64 = 0x5041_5254;
pub const STREAM_SUBMODEL: u64 = 0x5355_424d;
pub const STREAM_AGGREGATOR: u64 = 0x4147_4752;
pub const STREAM_DELETE: u64 = 0x4445_4c45;
pub const STREAM_NOISE: u64 = 0x4e4f_4953;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of integers into a new seed.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `(global seed, shard id, retrain counter)`: fixes every random choice made
/// while training one sub-model generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedLineage {
    pub global_seed: u64,
    pub shard_id: usize,
    pub retrain_counter: u64,
}

impl SeedLineage {
    pub fn new(global_seed: u64, shard_id: usize, retrain_counter: u64) -> Self {
        Self { global_seed, shard_id, retrain_counter }
    }

    pub fn seed(&self) -> u64 {
        derive(self.global_seed, &[STREAM_SUBMODEL, self.shard_id as u64, self.retrain_counter])
    }

    pub fn rng(&self) -> Rng {
        rng(self.seed())
    }
}
