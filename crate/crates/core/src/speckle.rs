//! Multiplicative gamma speckle: `y = x * n` with `n` drawn i.i.d. per pixel
//! from a unit-mean Gamma distribution of shape L (the number of looks), so
//! the noise variance is 1/L and L=1 is the fully developed single-look case.

use crate::error::{Error, Result};
use crate::rng::{SplitMix64, STREAM_SPECKLE};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Looks count and RNG seed governing one speckle realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeckleParams {
    /// Number of looks L >= 1. Integer in practice, real values accepted.
    pub looks: f64,
    pub seed: u64,
}

impl SpeckleParams {
    pub fn new(looks: f64, seed: u64) -> Result<Self> {
        if !(looks >= 1.0) || !looks.is_finite() {
            return Err(Error::InvalidParam(format!(
                "number of looks must be >= 1, got {looks}"
            )));
        }
        Ok(SpeckleParams { looks, seed })
    }
}

/// A clean image, its speckled counterpart, and the parameters that tie them.
#[derive(Debug, Clone)]
pub struct ImagePair<S: Scalar> {
    pub clean: Tensor<S>,
    pub speckled: Tensor<S>,
    pub params: SpeckleParams,
}

/// One unit-mean gamma draw of shape `looks` (scale 1/looks).
///
/// looks == 1 reduces to -ln(U); looks > 1 uses the Marsaglia-Tsang squeeze
/// (exact rejection sampling, no distributional approximation). Sampling runs
/// in f64 regardless of the tensor scalar type, so a (seed, looks) pair pins
/// the field bit-for-bit.
fn gamma_unit_mean(rng: &mut SplitMix64, looks: f64) -> f64 {
    if looks == 1.0 {
        return -rng.next_f64().ln();
    }
    let d = looks - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z = rng.next_normal();
        let t = 1.0 + c * z;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = rng.next_f64();
        if u.ln() < 0.5 * z * z + d - d * v + d * v.ln() {
            return d * v / looks;
        }
    }
}

/// An i.i.d. speckle field of shape `[1, h, w]`, deterministic per params.
pub fn sample_speckle<S: Scalar>(h: usize, w: usize, params: SpeckleParams) -> Result<Tensor<S>> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidParam(format!(
            "speckle field dims must be >= 1, got {h}x{w}"
        )));
    }
    SpeckleParams::new(params.looks, params.seed)?;
    let mut rng = SplitMix64::derive(params.seed, &[STREAM_SPECKLE]);
    let data: Vec<S> = (0..h * w)
        .map(|_| S::from_f64(gamma_unit_mean(&mut rng, params.looks)))
        .collect();
    Tensor::from_vec(vec![1, h, w], data)
}

/// Density of the speckle amplitude: `L^L n^(L-1) e^(-Ln) / Gamma(L)`.
/// Used by tests to validate the sampler against its analytic form.
pub fn speckle_pdf(n: f64, looks: f64) -> f64 {
    if n < 0.0 {
        return 0.0;
    }
    if n == 0.0 {
        // The n^(L-1) factor: 1 at L=1, vanishing above.
        return if looks == 1.0 { looks } else { 0.0 };
    }
    let log_pdf = looks * looks.ln() + (looks - 1.0) * n.ln() - looks * n - libm::lgamma(looks);
    log_pdf.exp()
}

/// Multiply a clean `[1,H,W]` image in [0,1] by a fresh speckle field.
pub fn apply_speckle<S: Scalar>(clean: &Tensor<S>, params: SpeckleParams) -> Result<ImagePair<S>> {
    if clean.rank() != 3 || clean.shape()[0] != 1 {
        return Err(Error::shape(format!(
            "apply_speckle expects a [1,H,W] image, got {:?}",
            clean.shape()
        )));
    }
    let data = clean.data();
    if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| **v < S::zero()) {
        return Err(Error::Data(format!(
            "clean image has negative pixel {v} at flat index {i}; values must lie in [0,1]"
        )));
    }
    let (h, w) = (clean.shape()[1], clean.shape()[2]);
    let noise = sample_speckle::<S>(h, w, params)?;
    let clean = clean.detach();
    let speckled = clean.mul(&noise)?;
    Ok(ImagePair {
        clean,
        speckled,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(samples: &[f64]) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var)
    }

    fn draw(looks: f64, seed: u64, count: usize) -> Vec<f64> {
        let mut rng = SplitMix64::derive(seed, &[STREAM_SPECKLE]);
        (0..count).map(|_| gamma_unit_mean(&mut rng, looks)).collect()
    }

    #[test]
    fn unit_mean_and_variance_one_look() {
        let s = draw(1.0, 7, 1_000_000);
        let (mean, var) = moments(&s);
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
        assert!((0.98..=1.02).contains(&var), "var {var}");
    }

    #[test]
    fn four_look_variance_is_quarter() {
        let s = draw(4.0, 11, 1_000_000);
        let (mean, var) = moments(&s);
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
        assert!((0.245..=0.255).contains(&var), "var {var}");
    }

    #[test]
    fn seeded_fields_are_identical() {
        let params = SpeckleParams::new(1.0, 99).unwrap();
        let a = sample_speckle::<f64>(17, 23, params).unwrap();
        let b = sample_speckle::<f64>(17, 23, params).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn looks_below_one_rejected() {
        assert!(SpeckleParams::new(0.5, 0).is_err());
        assert!(SpeckleParams::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn pdf_values_at_one_look() {
        // Analytic evaluations of the density.
        assert!((speckle_pdf(1.0, 1.0) - (-1.0f64).exp()).abs() < 1e-12);
        assert!((speckle_pdf(0.0, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pdf_integrates_to_one() {
        // Simpson quadrature over [0, 50] at L = 4.
        let n = 100_000;
        let a = 0.0;
        let b = 50.0;
        let h = (b - a) / n as f64;
        let mut acc = speckle_pdf(a, 4.0) + speckle_pdf(b, 4.0);
        for i in 1..n {
            let x = a + i as f64 * h;
            acc += speckle_pdf(x, 4.0) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = acc * h / 3.0;
        assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
    }

    #[test]
    fn histogram_matches_pdf_within_multinomial_bounds() {
        // 50 bins over [0,8]; expected mass per bin by Simpson quadrature of
        // the density; observed counts must sit within 3 sigma of the
        // multinomial expectation in every bin.
        let n = 100_000;
        let samples = draw(1.0, 2718, n);
        let bins = 50;
        let hi = 8.0;
        let width = hi / bins as f64;
        let mut counts = vec![0usize; bins];
        for &s in &samples {
            if s < hi {
                counts[(s / width) as usize] += 1;
            }
        }
        for b in 0..bins {
            let a = b as f64 * width;
            let quad_n = 64;
            let h = width / quad_n as f64;
            let mut acc = speckle_pdf(a, 1.0) + speckle_pdf(a + width, 1.0);
            for i in 1..quad_n {
                acc += speckle_pdf(a + i as f64 * h, 1.0) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let p = acc * h / 3.0;
            let expected = n as f64 * p;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            let dev = (counts[b] as f64 - expected).abs();
            assert!(
                dev <= 3.0 * sigma,
                "bin {b}: count {} vs expected {expected:.1} (3 sigma = {:.1})",
                counts[b],
                3.0 * sigma
            );
        }
    }

    #[test]
    fn apply_preserves_zeros_and_scales() {
        let params = SpeckleParams::new(1.0, 5).unwrap();
        let zeros = Tensor::<f64>::zeros(vec![1, 8, 8]).unwrap();
        let pair = apply_speckle(&zeros, params).unwrap();
        assert!(pair.speckled.to_vec().iter().all(|&v| v == 0.0));

        // Constant 0.5 image equals half the raw field, same seed.
        let half = Tensor::<f64>::full(vec![1, 8, 8], 0.5).unwrap();
        let pair = apply_speckle(&half, params).unwrap();
        let field = sample_speckle::<f64>(8, 8, params).unwrap();
        for (s, n) in pair.speckled.to_vec().iter().zip(field.to_vec()) {
            assert_eq!(*s, 0.5 * n);
        }
    }

    #[test]
    fn apply_rejects_negative_pixels() {
        let params = SpeckleParams::new(1.0, 5).unwrap();
        let bad = Tensor::<f64>::from_vec(vec![1, 1, 2], vec![0.5, -0.1]).unwrap();
        assert!(apply_speckle(&bad, params).is_err());
    }

    #[test]
    fn speckled_mean_and_var_track_clean_ones() {
        let params = SpeckleParams::new(1.0, 31).unwrap();
        let ones = Tensor::<f64>::full(vec![1, 512, 512], 1.0).unwrap();
        let pair = apply_speckle(&ones, params).unwrap();
        let (mean, var) = moments(&pair.speckled.to_vec());
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }
}
