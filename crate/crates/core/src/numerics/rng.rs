use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by the ChaCha12 counter-mode generator: the 64-bit `seed` is
/// expanded to the 256-bit key with the PCG32 expansion of
/// `SeedableRng::seed_from_u64`, and `stream_id` selects the ChaCha nonce.
/// Output is a pure function of key, nonce and block counter, so identical
/// `(seed, stream_id)` pairs give identical sequences on every platform.
/// Gaussian variates use the ziggurat sampler of `rand_distr`.
///
/// A stream is owned by exactly one run and is never shared across threads.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n`, uniformly over all k-subsets.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k).into_vec()
    }
}

/// One draw from N(mean, std²). `std == 0` returns `mean` exactly.
pub fn gaussian_sample(rng: &mut RngStream, mean: f64, std: f64) -> Result<f64> {
    if !std.is_finite() || !mean.is_finite() {
        return Err(Error::NonFinite("gaussian parameters"));
    }
    if std < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "negative standard deviation {std}"
        )));
    }
    let z = rng.standard_normal();
    if std == 0.0 {
        return Ok(mean);
    }
    Ok(mean + std * z)
}
