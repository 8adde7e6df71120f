//! Deterministic random numbers for the whole pipeline.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood, 2014): a 64-bit counter
//! advanced by the golden-ratio increment, hashed through two xor-shift
//! multiplies per output. It is counter-based, so streams are cheap to derive,
//! portable across platforms, and a (seed, stream) pair pins every byte the
//! pipeline ever draws. Dataset manifests record these seeds.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Derive an independent stream from a seed and a label path, e.g.
    /// `(seed, &[STREAM_SHUFFLE, epoch])`. Mixing each label into the state
    /// keeps streams decorrelated without any stateful splitting.
    pub fn derive(seed: u64, labels: &[u64]) -> Self {
        let mut state = mix(seed);
        for &label in labels {
            state = mix(state ^ label.wrapping_mul(GOLDEN));
        }
        SplitMix64 { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in the open interval (0, 1): `(n + 0.5) / 2^53` over the top
    /// 53 bits, so it is safe under `ln` and never returns 0 or 1.
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via Box-Muller. Draws two uniforms per value and
    /// discards the sine branch; no state is cached between calls.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Normal truncated to [-2σ, 2σ] by rejection.
    pub fn next_trunc_normal(&mut self, sigma: f64) -> f64 {
        loop {
            let z = self.next_normal();
            if z.abs() <= 2.0 {
                return z * sigma;
            }
        }
    }

    pub fn next_range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_range(i + 1);
            items.swap(i, j);
        }
    }
}

// Stream labels. Keeping them in one place avoids accidental collisions.
pub const STREAM_SPECKLE: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;
pub const STREAM_DROPOUT: u64 = 4;
pub const STREAM_DATASET: u64 = 5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = SplitMix64::derive(7, &[STREAM_SPECKLE, 0]);
        let mut b = SplitMix64::derive(7, &[STREAM_SPECKLE, 1]);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_is_open_interval() {
        let mut rng = SplitMix64::new(1);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut rng = SplitMix64::new(3);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let z = rng.next_normal();
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = SplitMix64::new(5);
        let mut v: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, (0..100).collect::<Vec<_>>());
    }
}
