//! Adam with bias correction. Moment tensors live alongside the parameter
//! names so checkpoints can restore them for trajectory-identical resumes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Parameter;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MomentEntry<S: Scalar> {
    pub name: String,
    pub m: Vec<S>,
    pub v: Vec<S>,
}

/// First/second moment accumulators, one entry per parameter in model order.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    pub entries: Vec<MomentEntry<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn for_params(params: &[&Parameter<S>]) -> Self {
        AdamState {
            entries: params
                .iter()
                .map(|p| MomentEntry {
                    name: p.name().to_string(),
                    m: vec![S::zero(); p.numel()],
                    v: vec![S::zero(); p.numel()],
                })
                .collect(),
        }
    }

    fn check_alignment(&self, params: &[&Parameter<S>]) -> Result<()> {
        if self.entries.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer state has {} entries, model has {} parameters",
                self.entries.len(),
                params.len()
            )));
        }
        for (e, p) in self.entries.iter().zip(params) {
            if e.name != p.name() || e.m.len() != p.numel() {
                return Err(Error::Checkpoint(format!(
                    "optimizer state entry '{}' ({} values) does not match parameter '{}' ({})",
                    e.name,
                    e.m.len(),
                    p.name(),
                    p.numel()
                )));
            }
        }
        Ok(())
    }

    /// One bias-corrected update. `t` is the 1-based step count. Parameters
    /// with no gradient (never touched by the loss) are left untouched.
    pub fn step(&mut self, params: &[&Parameter<S>], t: u64, cfg: &AdamConfig) -> Result<()> {
        self.check_alignment(params)?;
        let b1 = S::from_f64(cfg.beta1);
        let b2 = S::from_f64(cfg.beta2);
        let one = S::one();
        let corr1 = S::from_f64(1.0 - cfg.beta1.powi(t as i32));
        let corr2 = S::from_f64(1.0 - cfg.beta2.powi(t as i32));
        let lr = S::from_f64(cfg.lr);
        let eps = S::from_f64(cfg.eps);
        for (entry, p) in self.entries.iter_mut().zip(params) {
            let Some(grad) = p.grad() else { continue };
            if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of '{}' is {} at flat index {pos}",
                    p.name(),
                    grad[pos]
                )));
            }
            let mut data = p.data().as_ref().clone();
            for i in 0..data.len() {
                let g = grad[i];
                entry.m[i] = b1 * entry.m[i] + (one - b1) * g;
                entry.v[i] = b2 * entry.v[i] + (one - b2) * g * g;
                let m_hat = entry.m[i] / corr1;
                let v_hat = entry.v[i] / corr2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.set_data(data)?;
        }
        Ok(())
    }
}
