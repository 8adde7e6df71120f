//! Composite training objective: weighted sum of a squared-error term and an
//! anisotropic total-variation term.
//!
//! Both terms are sums, not means, so the default weights keep their relative
//! scaling at the 256x256 patch size. `normalize` divides each term by its
//! pixel count; when it is on, the lambda weights act per pixel and need
//! rescaling to match the sum-form defaults.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub normalize: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 5e-5,
            normalize: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::InvalidParam(format!(
                "loss weights must be >= 0, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Sum of squared differences, differentiable w.r.t. `estimate`.
pub fn l2_loss<S: Scalar>(estimate: &Tensor<S>, target: &Tensor<S>) -> Result<Tensor<S>> {
    if estimate.shape() != target.shape() {
        return Err(Error::shape(format!(
            "l2_loss: estimate {:?} and target {:?} must match",
            estimate.shape(),
            target.shape()
        )));
    }
    let diff = estimate.sub(target)?;
    Ok(diff.mul(&diff)?.sum())
}

/// Anisotropic total variation over a `[1,H,W]` (or `[C,H,W]`) image:
/// one-sided absolute neighbor differences, subgradient 0 at ties.
pub fn tv_loss<S: Scalar>(estimate: &Tensor<S>) -> Result<Tensor<S>> {
    estimate.tv2d()
}

/// `lambda1 * l2 + lambda2 * tv`.
pub fn total_loss<S: Scalar>(
    estimate: &Tensor<S>,
    target: &Tensor<S>,
    weights: &LossWeights,
) -> Result<Tensor<S>> {
    weights.validate()?;
    let n = S::from_usize(estimate.numel());
    let mut l2 = l2_loss(estimate, target)?;
    let mut tv = tv_loss(estimate)?;
    if weights.normalize {
        l2 = l2.scale(S::one() / n);
        tv = tv.scale(S::one() / n);
    }
    l2.scale(S::from_f64(weights.lambda1))
        .add(&tv.scale(S::from_f64(weights.lambda2)))
}
