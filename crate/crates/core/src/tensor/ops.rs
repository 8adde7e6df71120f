//! Forward operations. Each op validates shapes, computes the output with a
//! plain kernel, and records a backprop node when any input is tracked.
//!
//! Convolution uses cross-correlation semantics (no kernel flip), the
//! prevailing deep-learning convention. Broadcasting is deliberately limited
//! to bias vectors and scalar ops; all other shapes must match exactly.

use rayon::prelude::*;
use std::sync::Arc;

use super::{BackOp, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Below this many multiply-accumulates a kernel stays single-threaded.
const PAR_MIN_WORK: usize = 1 << 15;

pub(crate) fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn same_shape<S: Scalar>(op: &str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} must match exactly",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("add", self, other)?;
        let (a, b) = (self.data(), other.data());
        let data: Vec<S> = a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect();
        let op = (self.is_tracked() || other.is_tracked()).then(|| BackOp::Add {
            a: self.clone(),
            b: other.clone(),
        });
        Ok(Tensor::with_op(self.shape().to_vec(), data, op))
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("sub", self, other)?;
        let (a, b) = (self.data(), other.data());
        let data: Vec<S> = a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect();
        let op = (self.is_tracked() || other.is_tracked()).then(|| BackOp::Sub {
            a: self.clone(),
            b: other.clone(),
        });
        Ok(Tensor::with_op(self.shape().to_vec(), data, op))
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("mul", self, other)?;
        let (a, b) = (self.data(), other.data());
        let data: Vec<S> = a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect();
        let op = (self.is_tracked() || other.is_tracked()).then(|| BackOp::Mul {
            a: self.clone(),
            b: other.clone(),
        });
        Ok(Tensor::with_op(self.shape().to_vec(), data, op))
    }

    pub fn div(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("div", self, other)?;
        let (a, b) = (self.data(), other.data());
        let data: Vec<S> = a.iter().zip(b.iter()).map(|(&x, &y)| x / y).collect();
        let op = (self.is_tracked() || other.is_tracked()).then(|| BackOp::Div {
            a: self.clone(),
            b: other.clone(),
        });
        Ok(Tensor::with_op(self.shape().to_vec(), data, op))
    }

    pub fn neg(&self) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&x| -x).collect();
        let op = self.is_tracked().then(|| BackOp::Neg { a: self.clone() });
        Tensor::with_op(self.shape().to_vec(), data, op)
    }

    pub fn scale(&self, k: S) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&x| x * k).collect();
        let op = self.is_tracked().then(|| BackOp::Scale { a: self.clone(), k });
        Tensor::with_op(self.shape().to_vec(), data, op)
    }

    pub fn add_scalar(&self, k: S) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&x| x + k).collect();
        let op = self.is_tracked().then(|| BackOp::AddScalar { a: self.clone() });
        Tensor::with_op(self.shape().to_vec(), data, op)
    }

    pub fn relu(&self) -> Tensor<S> {
        let data: Vec<S> = self
            .data()
            .iter()
            .map(|&x| if x > S::zero() { x } else { S::zero() })
            .collect();
        let op = self.is_tracked().then(|| BackOp::Relu { a: self.clone() });
        Tensor::with_op(self.shape().to_vec(), data, op)
    }

    /// Exact GELU: `x * Phi(x)` with the erf-based standard-normal CDF.
    pub fn gelu(&self) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&x| x * normal_cdf(x)).collect();
        let op = self.is_tracked().then(|| BackOp::Gelu { a: self.clone() });
        Tensor::with_op(self.shape().to_vec(), data, op)
    }

    /// Softmax along `axis`, computed with max-subtraction. Rejects
    /// non-finite inputs, naming the first offending flat index.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() {
            return Err(Error::shape(format!(
                "softmax: axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        let x = self.data();
        if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "softmax input has non-finite value {v} at flat index {i}"
            )));
        }
        let shape = self.shape();
        let lanes = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out = vec![S::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * lanes * inner + i;
                let mut max = x[base];
                for l in 1..lanes {
                    let v = x[base + l * inner];
                    if v > max {
                        max = v;
                    }
                }
                let mut sum = S::zero();
                for l in 0..lanes {
                    let e = (x[base + l * inner] - max).exp();
                    out[base + l * inner] = e;
                    sum += e;
                }
                for l in 0..lanes {
                    out[base + l * inner] = out[base + l * inner] / sum;
                }
            }
        }
        let saved = Arc::new(out.clone());
        let op = self.is_tracked().then(|| BackOp::Softmax {
            a: self.clone(),
            axis,
            out: saved,
        });
        Ok(Tensor::with_op(shape.to_vec(), out, op))
    }

    /// Layer normalization over the last dimension, then affine transform.
    /// Population variance with `eps` inside the square root, so constant
    /// rows map to the offset instead of erroring.
    pub fn layer_norm(&self, gain: &Tensor<S>, offset: &Tensor<S>, eps: S) -> Result<Tensor<S>> {
        let d = *self.shape().last().unwrap();
        if gain.shape() != [d] || offset.shape() != [d] {
            return Err(Error::shape(format!(
                "layer_norm: gain {:?} / offset {:?} must both be [{d}] for input {:?}",
                gain.shape(),
                offset.shape(),
                self.shape()
            )));
        }
        let x = self.data();
        let g = gain.data();
        let b = offset.data();
        let rows = x.len() / d;
        let mut out = vec![S::zero(); x.len()];
        let mut xhat = vec![S::zero(); x.len()];
        let mut rstd = vec![S::zero(); rows];
        let inv_d = S::one() / S::from_usize(d);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mut mean = S::zero();
            for &v in row {
                mean += v;
            }
            mean = mean * inv_d;
            let mut var = S::zero();
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var = var * inv_d;
            let r_std = S::one() / (var + eps).sqrt();
            rstd[r] = r_std;
            for i in 0..d {
                let xh = (row[i] - mean) * r_std;
                xhat[r * d + i] = xh;
                out[r * d + i] = g[i] * xh + b[i];
            }
        }
        let op = (self.is_tracked() || gain.is_tracked() || offset.is_tracked()).then(|| {
            BackOp::LayerNorm {
                a: self.clone(),
                gain: gain.clone(),
                offset: offset.clone(),
                xhat: Arc::new(xhat),
                rstd: Arc::new(rstd),
            }
        });
        Ok(Tensor::with_op(self.shape().to_vec(), out, op))
    }

    /// `[m,k] @ [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::shape(format!(
                "matmul: expected rank-2 operands, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner dims disagree, [{m},{k}] @ [{k2},{n}]"
            )));
        }
        let data = mm_nn(&self.data(), &other.data(), m, k, n);
        let op = (self.is_tracked() || other.is_tracked()).then(|| BackOp::Matmul {
            a: self.clone(),
            b: other.clone(),
        });
        Ok(Tensor::with_op(vec![m, n], data, op))
    }

    /// Batched matmul: `[B,m,k] @ [B,k,n] -> [B,m,n]`.
    pub fn bmm(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.rank() != 3 || other.rank() != 3 {
            return Err(Error::shape(format!(
                "bmm: expected rank-3 operands, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (bs, m, k) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (bs2, k2, n) = (other.shape()[0], other.shape()[1], other.shape()[2]);
        if bs != bs2 || k != k2 {
            return Err(Error::shape(format!(
                "bmm: [{bs},{m},{k}] @ [{bs2},{k2},{n}] is inconsistent"
            )));
        }
        let a = self.data();
        let b = other.data();
        let mut data = vec![S::zero(); bs * m * n];
        for bi in 0..bs {
            let c = mm_nn(&a[bi * m * k..(bi + 1) * m * k], &b[bi * k * n..(bi + 1) * k * n], m, k, n);
            data[bi * m * n..(bi + 1) * m * n].copy_from_slice(&c);
        }
        let op = (self.is_tracked() || other.is_tracked()).then(|| BackOp::Bmm {
            a: self.clone(),
            b: other.clone(),
        });
        Ok(Tensor::with_op(vec![bs, m, n], data, op))
    }

    /// `[n,in] @ [in,out] (+ bias[out]) -> [n,out]`. The only broadcast in
    /// the engine besides conv bias: one bias row added to every output row.
    pub fn linear(&self, weight: &Tensor<S>, bias: Option<&Tensor<S>>) -> Result<Tensor<S>> {
        if self.rank() != 2 || weight.rank() != 2 {
            return Err(Error::shape(format!(
                "linear: expected rank-2 input/weight, got {:?} and {:?}",
                self.shape(),
                weight.shape()
            )));
        }
        let (n, d_in) = (self.shape()[0], self.shape()[1]);
        let (d_in2, d_out) = (weight.shape()[0], weight.shape()[1]);
        if d_in != d_in2 {
            return Err(Error::shape(format!(
                "linear: input dim {d_in} does not match weight expecting {d_in2}"
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [d_out] {
                return Err(Error::shape(format!(
                    "linear: bias {:?} must be [{d_out}]",
                    b.shape()
                )));
            }
        }
        let mut data = mm_nn(&self.data(), &weight.data(), n, d_in, d_out);
        if let Some(b) = bias {
            let bv = b.data();
            for row in data.chunks_mut(d_out) {
                for (o, &bj) in row.iter_mut().zip(bv.iter()) {
                    *o += bj;
                }
            }
        }
        let tracked = self.is_tracked()
            || weight.is_tracked()
            || bias.map(|b| b.is_tracked()).unwrap_or(false);
        let op = tracked.then(|| BackOp::Linear {
            x: self.clone(),
            w: weight.clone(),
            bias: bias.cloned(),
        });
        Ok(Tensor::with_op(vec![n, d_out], data, op))
    }

    /// 2-D cross-correlation with zero padding.
    ///
    /// input `[C_in,H,W]`, weight `[C_out, C_in/groups, kh, kw]`, uniform
    /// stride and padding on both axes. `groups == C_in` with a
    /// `[C,1,kh,kw]` weight is the depth-wise case.
    pub fn conv2d(
        &self,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor<S>> {
        if self.rank() != 3 || weight.rank() != 4 {
            return Err(Error::shape(format!(
                "conv2d: expected input [C,H,W] and weight [Co,Ci/g,kh,kw], got {:?} and {:?}",
                self.shape(),
                weight.shape()
            )));
        }
        let (cin, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (cout, cpg, kh, kw) = (
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
        );
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::shape(format!(
                "conv2d: groups {groups} must divide C_in {cin} and C_out {cout}"
            )));
        }
        if cpg != cin / groups {
            return Err(Error::shape(format!(
                "conv2d: weight expects {cpg} channels per group, input gives {}",
                cin / groups
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::shape(format!(
                    "conv2d: bias {:?} must be [{cout}]",
                    b.shape()
                )));
            }
        }
        let (hout, wout) = match (conv_out_dim(h, kh, stride, padding), conv_out_dim(w, kw, stride, padding)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d: kernel {kh}x{kw} stride {stride} padding {padding} does not fit input {h}x{w}"
                )))
            }
        };
        let data = conv2d_fwd(
            &self.data(),
            cin,
            h,
            w,
            &weight.data(),
            cout,
            kh,
            kw,
            bias.map(|b| b.data()),
            stride,
            padding,
            groups,
            hout,
            wout,
        );
        let tracked = self.is_tracked()
            || weight.is_tracked()
            || bias.map(|b| b.is_tracked()).unwrap_or(false);
        let op = tracked.then(|| BackOp::Conv2d {
            input: self.clone(),
            weight: weight.clone(),
            bias: bias.cloned(),
            stride,
            padding,
            groups,
        });
        Ok(Tensor::with_op(vec![cout, hout, wout], data, op))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<S>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!(
                "reshape: {:?} -> {:?} changes element count",
                self.shape(),
                shape
            )));
        }
        let data = self.to_vec();
        let op = self.is_tracked().then(|| BackOp::Reshape { a: self.clone() });
        Ok(Tensor::with_op(shape, data, op))
    }

    /// Reorder axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<S>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(format!(
                "permute: {perm:?} is not a permutation of 0..{rank}"
            )));
        }
        let (data, shape) = permute_raw(&self.data(), self.shape(), perm);
        let op = self.is_tracked().then(|| BackOp::Permute {
            a: self.clone(),
            perm: perm.to_vec(),
        });
        Ok(Tensor::with_op(shape, data, op))
    }

    /// Nearest-neighbor 2x upsampling of `[C,H,W]`.
    pub fn upsample_nearest_2x(&self) -> Result<Tensor<S>> {
        if self.rank() != 3 {
            return Err(Error::shape(format!(
                "upsample_nearest_2x: expected [C,H,W], got {:?}",
                self.shape()
            )));
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let x = self.data();
        let mut out = vec![S::zero(); c * 4 * h * w];
        let (h2, w2) = (2 * h, 2 * w);
        for ci in 0..c {
            for y in 0..h2 {
                let src_row = ci * h * w + (y / 2) * w;
                let dst_row = ci * h2 * w2 + y * w2;
                for xcol in 0..w2 {
                    out[dst_row + xcol] = x[src_row + xcol / 2];
                }
            }
        }
        let op = self.is_tracked().then(|| BackOp::Upsample2x { a: self.clone() });
        Ok(Tensor::with_op(vec![c, h2, w2], out, op))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self) -> Tensor<S> {
        let total: S = self.data().iter().copied().sum();
        let op = self.is_tracked().then(|| BackOp::Sum { a: self.clone() });
        Tensor::with_op(vec![1], vec![total], op)
    }

    pub fn mean(&self) -> Tensor<S> {
        let total: S = self.data().iter().copied().sum();
        let n = S::from_usize(self.numel());
        let op = self.is_tracked().then(|| BackOp::Mean { a: self.clone() });
        Tensor::with_op(vec![1], vec![total / n], op)
    }

    /// Anisotropic total variation of `[C,H,W]`: one-sided absolute
    /// differences over valid indices, summed over channels. Subgradient at
    /// ties is 0.
    pub fn tv2d(&self) -> Result<Tensor<S>> {
        if self.rank() != 3 {
            return Err(Error::shape(format!(
                "tv2d: expected [C,H,W], got {:?}",
                self.shape()
            )));
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        if h == 1 && w == 1 {
            return Err(Error::shape("tv2d: degenerate 1x1 image has no variation"));
        }
        let x = self.data();
        let mut total = S::zero();
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    if i + 1 < h {
                        total += (plane[(i + 1) * w + j] - plane[i * w + j]).abs();
                    }
                    if j + 1 < w {
                        total += (plane[i * w + j + 1] - plane[i * w + j]).abs();
                    }
                }
            }
        }
        let op = self.is_tracked().then(|| BackOp::Tv { a: self.clone() });
        Ok(Tensor::with_op(vec![1], vec![total], op))
    }
}

pub(crate) fn normal_cdf<S: Scalar>(x: S) -> S {
    let half = S::from_f64(0.5);
    let inv_sqrt2 = S::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    half * (S::one() + (x * inv_sqrt2).erf())
}

pub(crate) fn normal_pdf<S: Scalar>(x: S) -> S {
    let half = S::from_f64(0.5);
    let inv_sqrt_2pi = S::from_f64(0.3989422804014327);
    inv_sqrt_2pi * (-half * x * x).exp()
}

/// `[m,k] @ [k,n]`, plain ikj loop, rows in parallel when large.
pub(crate) fn mm_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    let row_work = k * n;
    let run_row = |i: usize, crow: &mut [S]| {
        for kk in 0..k {
            let aik = a[i * k + kk];
            let brow = &b[kk * n..kk * n + n];
            for j in 0..n {
                crow[j] += aik * brow[j];
            }
        }
    };
    if m * row_work >= PAR_MIN_WORK && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| run_row(i, crow));
    } else {
        for (i, crow) in c.chunks_mut(n).enumerate() {
            run_row(i, crow);
        }
    }
    c
}

/// `a[m,ka] @ b[n,ka]^T -> [m,n]` (rows dotted with rows).
pub(crate) fn mm_nt<S: Scalar>(a: &[S], b: &[S], m: usize, ka: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    let run_row = |i: usize, crow: &mut [S]| {
        let arow = &a[i * ka..(i + 1) * ka];
        for j in 0..n {
            let brow = &b[j * ka..(j + 1) * ka];
            let mut s = S::zero();
            for kk in 0..ka {
                s += arow[kk] * brow[kk];
            }
            crow[j] = s;
        }
    };
    if m * ka * n >= PAR_MIN_WORK && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| run_row(i, crow));
    } else {
        for (i, crow) in c.chunks_mut(n).enumerate() {
            run_row(i, crow);
        }
    }
    c
}

/// `a[k,m]^T @ b[k,n] -> [m,n]`.
pub(crate) fn mm_tn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    let run_row = |i: usize, crow: &mut [S]| {
        for kk in 0..k {
            let av = a[kk * m + i];
            if av == S::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    };
    if m * k * n >= PAR_MIN_WORK && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| run_row(i, crow));
    } else {
        for (i, crow) in c.chunks_mut(n).enumerate() {
            run_row(i, crow);
        }
    }
    c
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_fwd<S: Scalar>(
    x: &[S],
    cin: usize,
    h: usize,
    w: usize,
    wt: &[S],
    cout: usize,
    kh: usize,
    kw: usize,
    bias: Option<Arc<Vec<S>>>,
    stride: usize,
    padding: usize,
    groups: usize,
    hout: usize,
    wout: usize,
) -> Vec<S> {
    let cpg = cin / groups;
    let cout_per_g = cout / groups;
    let mut out = vec![S::zero(); cout * hout * wout];
    if cpg == 1 && cout_per_g == 1 {
        depthwise_fwd(
            x, cin, h, w, wt, kh, kw, bias.as_deref(), stride, padding, hout, wout, &mut out,
        );
        return out;
    }
    // im2col per group, then one [cout/g, J] x [J, HW] matmul.
    let hw = hout * wout;
    let j = cpg * kh * kw;
    for g in 0..groups {
        let cols = im2col(&x[g * cpg * h * w..], cpg, h, w, kh, kw, stride, padding, hout, wout);
        let prod = mm_nn(&wt[g * cout_per_g * j..(g + 1) * cout_per_g * j], &cols, cout_per_g, j, hw);
        let dst = &mut out[g * cout_per_g * hw..(g + 1) * cout_per_g * hw];
        match &bias {
            Some(b) => {
                for oc in 0..cout_per_g {
                    let b0 = b[g * cout_per_g + oc];
                    for (o, &p) in dst[oc * hw..(oc + 1) * hw].iter_mut().zip(&prod[oc * hw..(oc + 1) * hw]) {
                        *o = p + b0;
                    }
                }
            }
            None => dst.copy_from_slice(&prod),
        }
    }
    out
}

/// Unfold the receptive fields: `[C,H,W] -> [C*kh*kw, hout*wout]` with zero
/// padding, one contiguous row per (channel, ky, kx).
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    hout: usize,
    wout: usize,
) -> Vec<S> {
    let hw = hout * wout;
    let mut cols = vec![S::zero(); c * kh * kw * hw];
    let fill_row = |row_idx: usize, dst: &mut [S]| {
        let ic = row_idx / (kh * kw);
        let ky = (row_idx / kw) % kh;
        let kx = row_idx % kw;
        let xplane = ic * h * w;
        for oh in 0..hout {
            let iy = (oh * stride + ky) as isize - padding as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let xrow = xplane + iy as usize * w;
            let drow = oh * wout;
            for ow in 0..wout {
                let ix = (ow * stride + kx) as isize - padding as isize;
                if ix < 0 || ix >= w as isize {
                    continue;
                }
                dst[drow + ow] = x[xrow + ix as usize];
            }
        }
    };
    if c * kh * kw * hw >= PAR_MIN_WORK {
        cols.par_chunks_mut(hw)
            .enumerate()
            .for_each(|(row, dst)| fill_row(row, dst));
    } else {
        for (row, dst) in cols.chunks_mut(hw).enumerate() {
            fill_row(row, dst);
        }
    }
    cols
}

/// Fold column gradients back onto the input: transpose of `im2col`.
#[allow(clippy::too_many_arguments)]
fn col2im_add<S: Scalar>(
    cols: &[S],
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    hout: usize,
    wout: usize,
    dst: &mut [S],
) {
    let hw = hout * wout;
    for (row, col) in cols.chunks(hw).enumerate() {
        let ic = row / (kh * kw);
        let ky = (row / kw) % kh;
        let kx = row % kw;
        let xplane = ic * h * w;
        for oh in 0..hout {
            let iy = (oh * stride + ky) as isize - padding as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let xrow = xplane + iy as usize * w;
            let srow = oh * wout;
            for ow in 0..wout {
                let ix = (ow * stride + kx) as isize - padding as isize;
                if ix < 0 || ix >= w as isize {
                    continue;
                }
                dst[xrow + ix as usize] += col[srow + ow];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn depthwise_fwd<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    wt: &[S],
    kh: usize,
    kw: usize,
    bias: Option<&Vec<S>>,
    stride: usize,
    padding: usize,
    hout: usize,
    wout: usize,
    out: &mut [S],
) {
    let plane = |ic: usize, dst: &mut [S]| {
        let xplane = ic * h * w;
        let wchan = ic * kh * kw;
        let b0 = bias.map(|b| b[ic]).unwrap_or_else(S::zero);
        for oh in 0..hout {
            for ow in 0..wout {
                let mut acc = b0;
                for ky in 0..kh {
                    let iy = (oh * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = xplane + iy as usize * w;
                    let wrow = wchan + ky * kw;
                    for kx in 0..kw {
                        let ix = (ow * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        acc += x[xrow + ix as usize] * wt[wrow + kx];
                    }
                }
                dst[oh * wout + ow] = acc;
            }
        }
    };
    if c * hout * wout * kh * kw >= PAR_MIN_WORK && c > 1 {
        out.par_chunks_mut(hout * wout)
            .enumerate()
            .for_each(|(ic, dst)| plane(ic, dst));
    } else {
        for (ic, dst) in out.chunks_mut(hout * wout).enumerate() {
            plane(ic, dst);
        }
    }
}

/// Gradients of conv2d w.r.t. input, weight, and bias via the im2col
/// factorization: dW = dOut x cols^T, dCols = W^T x dOut folded back with
/// col2im. Matmuls parallelize over rows with a fixed summation order, so
/// results are bit-deterministic at any thread count.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_bwd<S: Scalar>(
    x: &[S],
    cin: usize,
    h: usize,
    w: usize,
    wt: &[S],
    cout: usize,
    kh: usize,
    kw: usize,
    gout: &[S],
    stride: usize,
    padding: usize,
    groups: usize,
    hout: usize,
    wout: usize,
    want_bias: bool,
) -> (Vec<S>, Vec<S>, Option<Vec<S>>) {
    let cpg = cin / groups;
    let cout_per_g = cout / groups;
    let hw = hout * wout;
    let j = cpg * kh * kw;
    let mut gx = vec![S::zero(); cin * h * w];
    let mut gw = vec![S::zero(); cout * j];
    let mut gb = want_bias.then(|| vec![S::zero(); cout]);
    for g in 0..groups {
        let gout_g = &gout[g * cout_per_g * hw..(g + 1) * cout_per_g * hw];
        let cols = im2col(&x[g * cpg * h * w..], cpg, h, w, kh, kw, stride, padding, hout, wout);
        // dW[oc, j] = sum_p gout[oc, p] * cols[j, p]
        let dw = mm_nt(gout_g, &cols, cout_per_g, hw, j);
        gw[g * cout_per_g * j..(g + 1) * cout_per_g * j].copy_from_slice(&dw);
        // dCols[j, p] = sum_oc w[oc, j] * gout[oc, p]
        let dcols = mm_tn(&wt[g * cout_per_g * j..(g + 1) * cout_per_g * j], gout_g, j, cout_per_g, hw);
        col2im_add(
            &dcols,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            hout,
            wout,
            &mut gx[g * cpg * h * w..(g + 1) * cpg * h * w],
        );
        if let Some(bias) = gb.as_mut() {
            for oc in 0..cout_per_g {
                let mut acc = S::zero();
                for &v in &gout_g[oc * hw..(oc + 1) * hw] {
                    acc += v;
                }
                bias[g * cout_per_g + oc] = acc;
            }
        }
    }
    (gx, gw, gb)
}

pub(crate) fn permute_raw<S: Scalar>(x: &[S], shape: &[usize], perm: &[usize]) -> (Vec<S>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let mut out = Vec::with_capacity(x.len());
    let mut coords = vec![0usize; rank];
    for _ in 0..x.len() {
        let mut idx = 0;
        for d in 0..rank {
            idx += coords[d] * in_strides[perm[d]];
        }
        out.push(x[idx]);
        for d in (0..rank).rev() {
            coords[d] += 1;
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    (out, out_shape)
}
