//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 keystream whose key
//! is `(seed, domain)` and whose stream id is the item index (trajectory,
//! sample, ...). Results therefore do not depend on how items are scheduled
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Trajectory = 1,
    StartPoint = 2,
    CapacityUpper = 3,
    CapacityLower = 4,
    Campaign = 5,
}

pub fn stream_rng(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, e.g. per campaign instance.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    use rand::RngCore;
    stream_rng(seed, Domain::Campaign, index).next_u64()
}
