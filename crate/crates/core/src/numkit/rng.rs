use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor};

/// Seeded, platform-independent random stream (ChaCha8).
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` of the generator seeded with `seed`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.gen::<f64>() < p
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        items.shuffle(&mut self.inner);
    }

    pub fn uniform_tensor<T: Scalar>(&mut self, shape: &[usize], r: f64) -> Tensor<T> {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = T::lit(self.uniform(-r, r));
        }
        t
    }
}

/// Glorot-uniform initialisation: `U(−r, r)` with `r = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.uniform_tensor(shape, r)
}
