//! Deterministic, splittable randomness.
//!
//! Every stochastic operation takes an explicit [`RngState`]. The state wraps a
//! ChaCha8 stream cipher, which is counter based: a `(seed, stream)` pair
//! selects an independent keystream, so sub-streams can be handed to parallel
//! workers without any coordination and still reproduce bit for bit.

use rand::{Error as RandError, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position inside the current stream, in 32-bit words.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Derives an independent child stream keyed by `label`.
    ///
    /// Forking does not advance `self`; two forks with the same label are
    /// identical. Use distinct labels (e.g. item indices) for parallel work.
    pub fn fork(&self, label: u64) -> RngState {
        let stream = splitmix64(self.stream ^ splitmix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15)));
        let seed = splitmix64(self.seed ^ self.inner.get_word_pos() as u64);
        RngState::with_stream(seed, stream)
    }

    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits in [0, 1)
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() on an empty range");
        rand::Rng::gen_range(&mut self.inner, 0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), RandError> {
        self.inner.try_fill_bytes(dest)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
