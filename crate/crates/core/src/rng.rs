//! Seeded sampling. Every randomized check draws from a SplitMix64 stream so
//! that reports are reproducible bit for bit given the seed.

use rand::SeedableRng;

pub use rand_xoshiro::SplitMix64 as SampleRng;

pub fn seeded(seed: u64) -> SampleRng {
    SampleRng::seed_from_u64(seed)
}
