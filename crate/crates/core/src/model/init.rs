//! Weight initialization: truncated normal (sigma 0.02, cut at 2 sigma) for
//! linear and attention maps, fan-in-scaled uniform for convolutions, zeros
//! for biases and layer-norm offsets, ones for layer-norm gains. All draws
//! come from one seeded stream in construction order, so a (config, seed)
//! pair pins every initial weight.

use crate::rng::SplitMix64;
use crate::scalar::Scalar;

pub(crate) struct Init {
    rng: SplitMix64,
}

impl Init {
    pub fn new(rng: SplitMix64) -> Self {
        Init { rng }
    }

    pub fn trunc_normal<S: Scalar>(&mut self, n: usize) -> Vec<S> {
        (0..n)
            .map(|_| S::from_f64(self.rng.next_trunc_normal(0.02)))
            .collect()
    }

    pub fn uniform_fan_in<S: Scalar>(&mut self, n: usize, fan_in: usize) -> Vec<S> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        (0..n)
            .map(|_| S::from_f64((self.rng.next_f64() * 2.0 - 1.0) * bound))
            .collect()
    }

    pub fn zeros<S: Scalar>(&mut self, n: usize) -> Vec<S> {
        vec![S::zero(); n]
    }

    pub fn ones<S: Scalar>(&mut self, n: usize) -> Vec<S> {
        vec![S::one(); n]
    }
}
