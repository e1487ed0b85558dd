//! Keyed, splittable random streams.
//!
//! Every unit of work (a SimPT round, a conventional group and pass, a
//! document inside either) draws from its own ChaCha8 stream whose key is a
//! pure function of the master seed and the unit's coordinates. Output is
//! therefore independent of thread count and execution order.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep streams for different decisions disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    ShardDraw = 1,
    Pairing = 2,
    Masking = 3,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Coordinates of a random stream below a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub master_seed: u64,
    pub unit: u64,
    pub pass: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, unit: u64, pass: u64) -> Self {
        StreamKey {
            master_seed,
            unit,
            pass,
        }
    }

    pub fn rng(&self, domain: Domain, item: u64) -> KeyedRng {
        let mut seed = [0u8; 32];
        let mut h = splitmix(self.master_seed);
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&h.to_le_bytes());
            h = splitmix(h);
        }
        let mut stream = splitmix(domain as u64);
        for part in [self.unit, self.pass, item] {
            stream = splitmix(stream ^ part);
        }
        let mut inner = ChaCha8Rng::from_seed(seed);
        inner.set_stream(stream);
        KeyedRng { inner }
    }
}

/// Thin wrapper with platform-independent sampling helpers.
#[derive(Debug, Clone)]
pub struct KeyedRng {
    inner: ChaCha8Rng,
}

impl KeyedRng {
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit_f64() < p
    }

    /// Uniform in `[0, n)` by rejection sampling. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % n;
            }
        }
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }

    /// Uniform in the inclusive range `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        lo + self.index(hi - lo + 1)
    }

    /// Partial Fisher-Yates: `k` distinct indices from `[0, n)` in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> alloc::vec::Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: alloc::vec::Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
