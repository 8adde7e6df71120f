//! Finite-difference verification of the reverse pass.
//!
//! Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate,
//! compared against `backward()` with relative error normalized by
//! `max(|analytic|, |numeric|, 1e-8)`. Meant to run at 64-bit precision with
//! h around 1e-5; large tensors can be spot-checked on a seeded coordinate
//! sample.

use super::{Parameter, Tensor};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Input and flat coordinate where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    fn observe(&mut self, label: &str, coord: usize, rel: f64) {
        self.coords_checked += 1;
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = Some((label.to_string(), coord));
        }
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_scalar<S: Scalar>(out: Tensor<S>) -> Result<f64> {
    out.item().map(|v| v.as_f64())
}

fn ensure_deterministic(y1: f64, y2: f64) -> Result<()> {
    if y1.to_bits() != y2.to_bits() {
        return Err(Error::InvalidParam(
            "grad_check: function is non-deterministic across evaluations; \
             run it in deterministic mode (disable dropout)"
                .into(),
        ));
    }
    Ok(())
}

/// Pick which coordinates of an n-element tensor to probe.
fn coord_sample(n: usize, max_coords: usize, rng: &mut SplitMix64) -> Vec<usize> {
    if n <= max_coords {
        return (0..n).collect();
    }
    let mut picked = std::collections::HashSet::with_capacity(max_coords);
    let mut out = Vec::with_capacity(max_coords);
    while out.len() < max_coords {
        let i = rng.next_range(n);
        if picked.insert(i) {
            out.push(i);
        }
    }
    out.sort_unstable();
    out
}

/// Check `f`'s gradient w.r.t. a single leaf tensor, every coordinate.
pub fn grad_check<S, F>(f: F, x: &Tensor<S>, h: f64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&Tensor<S>) -> Result<Tensor<S>>,
{
    if !x.requires_grad() {
        return Err(Error::InvalidParam(
            "grad_check: input must be a gradient-tracked leaf".into(),
        ));
    }
    ensure_deterministic(eval_scalar(f(x)?)?, eval_scalar(f(x)?)?)?;

    x.zero_grad();
    let loss = f(x)?;
    loss.backward()?;
    let analytic = x.grad().unwrap_or_else(|| vec![S::zero(); x.numel()]);

    let orig = x.to_vec();
    let hs = S::from_f64(h);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for i in 0..orig.len() {
        let mut bumped = orig.clone();
        bumped[i] = orig[i] + hs;
        x.set_data(bumped)?;
        let fp = eval_scalar(f(x)?)?;
        let mut bumped = orig.clone();
        bumped[i] = orig[i] - hs;
        x.set_data(bumped)?;
        let fm = eval_scalar(f(x)?)?;
        let numeric = (fp - fm) / (2.0 * h);
        report.observe("x", i, rel_err(analytic[i].as_f64(), numeric));
    }
    x.set_data(orig)?;
    Ok(report)
}

/// Check a zero-argument scalar function against the gradients of a set of
/// parameters it closes over (e.g. a whole model). Tensors larger than
/// `max_coords_per_tensor` are probed on a seeded random coordinate subset.
pub fn grad_check_params<S, F>(
    f: F,
    params: &[&Parameter<S>],
    h: f64,
    max_coords_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn() -> Result<Tensor<S>>,
{
    ensure_deterministic(eval_scalar(f()?)?, eval_scalar(f()?)?)?;

    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    loss.backward()?;
    let analytic: Vec<Vec<S>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![S::zero(); p.numel()]))
        .collect();

    let hs = S::from_f64(h);
    let mut rng = SplitMix64::derive(seed, &[0x6D63]);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        let orig = p.data().as_ref().clone();
        for i in coord_sample(orig.len(), max_coords_per_tensor, &mut rng) {
            let mut bumped = orig.clone();
            bumped[i] = orig[i] + hs;
            p.set_data(bumped)?;
            let fp = eval_scalar(f()?)?;
            let mut bumped = orig.clone();
            bumped[i] = orig[i] - hs;
            p.set_data(bumped)?;
            let fm = eval_scalar(f()?)?;
            p.set_data(orig.clone())?;
            let numeric = (fp - fm) / (2.0 * h);
            report.observe(p.name(), i, rel_err(analytic[pi][i].as_f64(), numeric));
        }
        p.set_data(orig)?;
    }
    Ok(report)
}
