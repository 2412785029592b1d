//! Deterministic randomness: one root seed, independent named substreams.
//!
//! Every random draw in the pipeline flows through a [`Stream`] derived from
//! the root seed plus a stable name (and optional index). Adding a new
//! consumer therefore never perturbs the draws of existing ones, and
//! per-patient / per-tree streams make parallel generation order-independent.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Derives named substreams from one root 64-bit seed.
#[derive(Debug, Clone, Copy)]
pub struct SeedBank {
    root: u64,
}

impl SeedBank {
    pub fn new(root: u64) -> Self {
        SeedBank { root }
    }

    /// Stream for a named concern ("demographics", "encounters", ...).
    pub fn stream(&self, name: &str) -> Stream {
        Stream::from_seed(splitmix(self.root ^ fnv1a(name.as_bytes())))
    }

    /// Indexed stream, e.g. one per patient or per tree.
    pub fn stream_indexed(&self, name: &str, index: u64) -> Stream {
        let mixed = splitmix(self.root ^ fnv1a(name.as_bytes())) ^ splitmix(index.wrapping_add(1));
        Stream::from_seed(splitmix(mixed))
    }
}

/// A single deterministic random stream.
pub struct Stream {
    inner: ChaCha8Rng,
    gauss_spare: Option<f64>,
}

impl Stream {
    fn from_seed(seed: u64) -> Self {
        Stream { inner: ChaCha8Rng::seed_from_u64(seed), gauss_spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Modulo bias is < 2^-40 for every n used here.
        self.inner.next_u64() % n
    }

    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Standard normal via Box-Muller, caching the spare deviate.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.gauss_spare.take() {
            return z;
        }
        let u1 = self.unit().max(f64::MIN_POSITIVE);
        let u2 = self.unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.gauss_spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Poisson via Knuth's product method; fine for the small rates used here.
    pub fn poisson(&mut self, lambda: f64) -> u64 {
        debug_assert!(lambda >= 0.0 && lambda < 60.0);
        if lambda <= 0.0 {
            return 0;
        }
        let limit = (-lambda).exp();
        let mut k = 0u64;
        let mut product = 1.0;
        loop {
            product *= self.unit();
            if product <= limit {
                return k;
            }
            k += 1;
        }
    }

    /// k distinct values from [0, n), ascending. Partial Fisher-Yates.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<u32> {
        let k = k.min(n);
        let mut pool: Vec<u32> = (0..n as u32).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Index draw from a cumulative weight table (binary search).
    pub fn from_cdf(&mut self, cdf: &[f64]) -> usize {
        let total = *cdf.last().expect("empty cdf");
        let u = self.unit() * total;
        cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
    }
}

/// FNV-1a over bytes; stable across platforms.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
pub fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
