//! Counter-based random streams.
//!
//! Every draw is a pure function of `(key, counter)`, where the key is derived
//! from a seed and a path of labels such as `(replication, cluster, stream)`.
//! Streams built from different paths are independent of each other and of
//! the order in which they are consumed, so generation can be split across
//! threads without changing any value.

use rand_core::{impls, RngCore};

/// Stream labels used by the data generator and the bootstrap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Exposure = 1,
    RandomEffect = 2,
    Size = 3,
    Covariates = 4,
    Outcome = 5,
    Misclassification = 6,
    Validation = 7,
    Bootstrap = 8,
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Widynski's "Squares" counter-based generator, 64-bit output variant.
#[inline]
fn squares64(ctr: u64, key: u64) -> u64 {
    let y = ctr.wrapping_mul(key);
    let mut x = y;
    let z = y.wrapping_add(key);
    x = x.wrapping_mul(x).wrapping_add(y).rotate_left(32);
    x = x.wrapping_mul(x).wrapping_add(z).rotate_left(32);
    x = x.wrapping_mul(x).wrapping_add(y).rotate_left(32);
    let t = x.wrapping_mul(x).wrapping_add(z);
    x = t.rotate_left(32);
    t ^ (x.wrapping_mul(x).wrapping_add(y) >> 32)
}

/// Derives a generator key from a seed and a label path. Keys are forced odd
/// and kept away from the low-entropy region the Squares construction
/// dislikes.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    let mut h = mix64(seed ^ 0x6A09_E667_F3BC_C909);
    for (depth, &label) in path.iter().enumerate() {
        h = mix64(h ^ mix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(depth as u64 + 1)));
    }
    let key = h | 1;
    if key.count_ones() < 16 {
        (key ^ 0xAAAA_AAAA_AAAA_AAAA) | 1
    } else {
        key
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    pub fn new(seed: u64, path: &[u64]) -> Self {
        Self { key: derive_key(seed, path), counter: 0 }
    }

    /// Stream for one cluster of one dataset.
    pub fn for_cluster(seed: u64, cluster: u64, stream: Stream) -> Self {
        Self::new(seed, &[cluster, stream as u64])
    }

    /// Uniform draw on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n` by rejection, free of modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % n;
            }
        }
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let v = squares64(self.counter, self.key);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
