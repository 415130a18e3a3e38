//! Reproducible random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (a counter-based
//! generator). An [`RngSpec`] names one stream: the 64-bit `seed` is expanded
//! into the 256-bit ChaCha key by `SeedableRng::seed_from_u64`, and
//! `stream_id` selects the ChaCha stream (nonce). Child streams for runs and
//! episodes are derived with [`RngSpec::split`], so work can be fanned out
//! across threads without changing a single drawn bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    /// Deterministically derives an independent child stream keyed by `key`.
    pub fn split(&self, key: u64) -> RngSpec {
        let mixed = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x9E37_79B9_7F4A_7C15)));
        RngSpec {
            seed: mixed,
            stream_id: key,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Inverse-CDF draw from a probability row. Zero-probability entries are
/// never returned.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // u landed in the rounding gap above the accumulated mass
    last_positive
}

/// A Dirichlet(1, ..., 1) draw: normalized standard exponentials.
pub fn dirichlet_ones<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len).map(|_| rng.sample(rand_distr::Exp1)).collect();
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= total);
    row
}
