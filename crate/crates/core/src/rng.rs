//! Named, seeded random streams.
//!
//! Every source of randomness in the crate draws from an [`RngStream`]
//! identified by a `(name, seed)` pair. The ChaCha state is derived from that
//! pair alone, so the same name and seed replay the same draw sequence on any
//! platform, and independent pipeline stages can own independent substreams
//! without consuming from each other.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A deterministic random stream identified by `(name, seed)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    name: String,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        let name = name.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(name.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest[..32]);
        RngStream {
            name,
            seed,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derive a fresh stream named `{parent}/{label}` under the same seed.
    ///
    /// Substreams are independent of the parent's current position; deriving
    /// one never consumes draws from the parent.
    pub fn substream(&self, label: &str) -> Self {
        RngStream::new(format!("{}/{}", self.name, label), self.seed)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}
