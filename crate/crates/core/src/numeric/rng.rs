use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Counter-based random stream keyed by `(master_seed, stream_id)`.
///
/// Backed by ChaCha8: the master seed keys the cipher, the stream id selects
/// the ChaCha nonce and the counter is the 32-bit word position, so any
/// `(master_seed, stream_id, counter)` triple names the same draws on every
/// platform. Gaussians use the Box–Muller transform of two uniforms.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

/// SplitMix64 finaliser, used to derive child stream ids.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        RngStream {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Position in 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Rewinds or advances to an absolute word position.
    pub fn seek(&mut self, counter: u128) {
        self.rng.set_word_pos(counter);
    }

    /// A fresh stream under the same master seed, keyed by this stream's id
    /// and `tag`. Does not consume draws from `self`.
    pub fn derive(&self, tag: u64) -> RngStream {
        RngStream::new(self.master_seed, mix64(self.stream_id ^ mix64(tag)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal via Box–Muller; consumes exactly two uniforms.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn uniform_tensor<S: Scalar>(&mut self, shape: &[usize]) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::of(self.uniform()))
    }

    pub fn gaussian_tensor<S: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::of(self.gaussian() * std))
    }
}
