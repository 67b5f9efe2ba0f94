//! Reproducible random-number streams.
//!
//! Every stochastic routine in this crate draws from a [`DriverStream`]
//! derived from a `(master seed, purpose, replicate)` triple. Distinct
//! triples give statistically independent streams, and a stream rebuilt from
//! the same triple replays bit-for-bit. This makes ensemble results
//! independent of scheduling: a replicate owns its stream, so running
//! replicates serially or across any number of workers produces identical
//! output.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Identifies one random stream: `(master_seed, purpose, replicate)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub master_seed: u64,
    pub purpose: u64,
    pub replicate: u64,
}

impl StreamId {
    pub fn new(master_seed: u64, purpose: &str, replicate: u64) -> Self {
        StreamId {
            master_seed,
            purpose: fnv1a(purpose.as_bytes()),
            replicate,
        }
    }
}

/// FNV-1a, used only to turn purpose tags into 64-bit salt.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// A seeded, counter-style random stream with the draw helpers used by the
/// simulation engines.
///
/// Internally a ChaCha8 generator keyed from the [`StreamId`]; the ChaCha
/// stream number is free for channel splitting via [`DriverStream::channel`].
#[derive(Debug, Clone)]
pub struct DriverStream {
    id: StreamId,
    rng: ChaCha8Rng,
}

impl DriverStream {
    pub fn derive(master_seed: u64, purpose: &str, replicate: u64) -> Self {
        Self::from_id(StreamId::new(master_seed, purpose, replicate))
    }

    pub fn from_id(id: StreamId) -> Self {
        let mut state = id
            .master_seed
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add(id.purpose)
            .wrapping_add(id.replicate.wrapping_mul(0x6a09e667f3bcc909));
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        DriverStream {
            id,
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// An independent sub-stream sharing this stream's key.
    ///
    /// Channels let one trajectory keep separate draw sequences per driver
    /// (Gaussian increments, division events, reservoir events, ...) so that
    /// lazily consumed draws in one channel do not shift the others. This is
    /// what keeps common random numbers aligned across Picard iterations.
    pub fn channel(&self, channel: u64) -> DriverStream {
        let mut rng = ChaCha8Rng::from_seed(self.rng.get_seed());
        rng.set_stream(channel + 1);
        DriverStream { id: self.id, rng }
    }

    /// Uniform draw on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal draw.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Exponential draw with the given mean.
    #[inline]
    pub fn exponential(&mut self, mean: f64) -> f64 {
        -mean * libm::log(1.0 - self.uniform())
    }

    /// Poisson draw by inversion/multiplication; `mean` is expected to be
    /// small (jump counts within one sub-step).
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let limit = libm::exp(-mean);
        let mut count = 0u64;
        let mut product = self.uniform();
        while product > limit {
            count += 1;
            product *= self.uniform();
        }
        count
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

impl RngCore for DriverStream {
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
