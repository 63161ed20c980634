use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A reproducible bank of `m` i.i.d. standard Gaussian vectors in dimension `n`.
///
/// Nothing is stored: sample `i` is regenerated on demand from a ChaCha8
/// keystream keyed by `seed` and selected by stream id `i`, so the same
/// `(seed, n, i)` yields the same vector regardless of which thread asks.
#[derive(Clone, Debug)]
pub struct SampleBank {
    seed: u64,
    n: usize,
    m: usize,
    key: [u8; 32],
}

impl SampleBank {
    pub fn new(seed: u64, n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidParameter(format!(
                "sample bank needs n >= 1 and m >= 1 (got n={n}, m={m})"
            )));
        }
        let mut key = [0u8; 32];
        ChaCha8Rng::seed_from_u64(seed).fill(&mut key);
        Ok(Self { seed, n, m, key })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Writes sample `i` into `out` (length `n`).
    pub fn fill<T: Real>(&self, i: usize, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.n);
        let mut rng = self.stream(i);
        for o in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *o = T::of(z);
        }
    }

    pub fn sample<T: Real>(&self, i: usize) -> Vec<T> {
        let mut v = vec![T::zero(); self.n];
        self.fill(i, &mut v);
        v
    }

    fn stream(&self, i: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(i as u64);
        rng
    }
}

/// Mixes a base seed with a tag so that banks built for different purposes
/// in one run are independent.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
