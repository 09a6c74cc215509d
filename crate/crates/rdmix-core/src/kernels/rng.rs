//! Seeded, splittable random streams.
//!
//! A stream is identified by `(seed, stream_id)`; chains own disjoint
//! stream ids. Substreams are derived by hashing a path of indices into the
//! ChaCha stream number, so per-shard draws inside an iteration are
//! reproducible regardless of how many workers process the shards.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

/// SplitMix64 finalizer; used to spread substream paths over the stream id
/// space.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive an independent stream addressed by `path` (e.g. `[iteration,
    /// shard]`). The result depends only on `(seed, stream_id, path)`, never
    /// on how much the parent stream has been consumed.
    pub fn substream(&self, path: &[u64]) -> RngStream {
        let mut h = mix(self.stream_id ^ 0x5851_f42d_4c95_7f2d);
        for &part in path {
            h = mix(h ^ mix(part));
        }
        RngStream::new(self.seed, h)
    }

    /// Uniform draw on (0, 1); never returns exactly 0 or 1.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u: f64 = rand::Rng::random(&mut self.rng);
            if u > 0.0 && u < 1.0 {
                return u;
            }
        }
    }

    /// Standard normal draw.
    pub fn std_normal(&mut self) -> f64 {
        rand::Rng::sample(&mut self.rng, rand_distr::StandardNormal)
    }

    /// Bernoulli draw with success probability `p` (clamped to [0, 1]).
    pub fn bernoulli(&mut self, p: f64) -> bool {
        let u: f64 = rand::Rng::random(&mut self.rng);
        u < p
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
