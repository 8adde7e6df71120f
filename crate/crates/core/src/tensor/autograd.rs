//! Backprop records and the reverse pass.
//!
//! Every differentiable op stores a `BackOp` holding handles to its parents
//! plus whatever the vector-Jacobian product needs (softmax saves its output,
//! layer norm its normalized values). `backward()` seeds the scalar loss with
//! gradient 1, walks the graph in reverse topological order with working
//! gradients held in a side map, and adds each node's finished working value
//! into its persistent accumulator. Keeping the sweep's working values apart
//! from the stored grads lets repeated calls accumulate without feeding the
//! previous result back into the chain rule.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::ops::{conv2d_bwd, mm_nt, mm_tn, normal_cdf, normal_pdf, permute_raw};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) enum BackOp<S: Scalar> {
    Add { a: Tensor<S>, b: Tensor<S> },
    Sub { a: Tensor<S>, b: Tensor<S> },
    Mul { a: Tensor<S>, b: Tensor<S> },
    Div { a: Tensor<S>, b: Tensor<S> },
    Neg { a: Tensor<S> },
    Scale { a: Tensor<S>, k: S },
    AddScalar { a: Tensor<S> },
    Relu { a: Tensor<S> },
    Gelu { a: Tensor<S> },
    Softmax { a: Tensor<S>, axis: usize, out: Arc<Vec<S>> },
    LayerNorm {
        a: Tensor<S>,
        gain: Tensor<S>,
        offset: Tensor<S>,
        xhat: Arc<Vec<S>>,
        rstd: Arc<Vec<S>>,
    },
    Matmul { a: Tensor<S>, b: Tensor<S> },
    Bmm { a: Tensor<S>, b: Tensor<S> },
    Linear { x: Tensor<S>, w: Tensor<S>, bias: Option<Tensor<S>> },
    Conv2d {
        input: Tensor<S>,
        weight: Tensor<S>,
        bias: Option<Tensor<S>>,
        stride: usize,
        padding: usize,
        groups: usize,
    },
    Reshape { a: Tensor<S> },
    Permute { a: Tensor<S>, perm: Vec<usize> },
    Upsample2x { a: Tensor<S> },
    Sum { a: Tensor<S> },
    Mean { a: Tensor<S> },
    Tv { a: Tensor<S> },
}

impl<S: Scalar> BackOp<S> {
    fn parents(&self) -> Vec<&Tensor<S>> {
        match self {
            BackOp::Add { a, b }
            | BackOp::Sub { a, b }
            | BackOp::Mul { a, b }
            | BackOp::Div { a, b }
            | BackOp::Matmul { a, b }
            | BackOp::Bmm { a, b } => vec![a, b],
            BackOp::Neg { a }
            | BackOp::Scale { a, .. }
            | BackOp::AddScalar { a }
            | BackOp::Relu { a }
            | BackOp::Gelu { a }
            | BackOp::Softmax { a, .. }
            | BackOp::Reshape { a }
            | BackOp::Permute { a, .. }
            | BackOp::Upsample2x { a }
            | BackOp::Sum { a }
            | BackOp::Mean { a }
            | BackOp::Tv { a } => vec![a],
            BackOp::LayerNorm { a, gain, offset, .. } => vec![a, gain, offset],
            BackOp::Linear { x, w, bias } => {
                let mut p = vec![x, w];
                if let Some(b) = bias {
                    p.push(b);
                }
                p
            }
            BackOp::Conv2d { input, weight, bias, .. } => {
                let mut p = vec![input, weight];
                if let Some(b) = bias {
                    p.push(b);
                }
                p
            }
        }
    }
}

impl<S: Scalar> Tensor<S> {
    /// Reverse-mode sweep from a scalar loss. Gradients accumulate, so
    /// repeated calls without `zero_grad` add up.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.is_tracked() {
            return Err(Error::InvalidParam(
                "backward: loss has no gradient tracking".into(),
            ));
        }
        let order = topo_order(self);
        let mut sink = GradSink::new();
        sink.add(self, vec![S::one()]);
        for t in order.iter().rev() {
            let gout = sink
                .take(t)
                .expect("every node in topological order receives a gradient");
            if let Some(op) = t.op() {
                apply_vjp(op, &gout, &mut sink);
            }
            t.accumulate_grad(&gout);
        }
        Ok(())
    }
}

/// Working gradients of the current sweep, keyed by node identity.
struct GradSink<S: Scalar> {
    map: HashMap<usize, Vec<S>>,
}

impl<S: Scalar> GradSink<S> {
    fn new() -> Self {
        GradSink { map: HashMap::new() }
    }

    fn add(&mut self, t: &Tensor<S>, contrib: Vec<S>) {
        debug_assert_eq!(contrib.len(), t.numel());
        match self.map.entry(t.ptr_id()) {
            std::collections::hash_map::Entry::Occupied(mut e) => {
                for (g, c) in e.get_mut().iter_mut().zip(contrib) {
                    *g += c;
                }
            }
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(contrib);
            }
        }
    }

    fn take(&mut self, t: &Tensor<S>) -> Option<Vec<S>> {
        self.map.remove(&t.ptr_id())
    }
}

/// Post-order over tracked nodes: parents appear before consumers.
fn topo_order<S: Scalar>(root: &Tensor<S>) -> Vec<Tensor<S>> {
    enum Visit<S: Scalar> {
        Enter(Tensor<S>),
        Exit(Tensor<S>),
    }
    let mut order = Vec::new();
    let mut seen: HashSet<usize> = HashSet::new();
    let mut stack = vec![Visit::Enter(root.clone())];
    while let Some(v) = stack.pop() {
        match v {
            Visit::Enter(t) => {
                if !seen.insert(t.ptr_id()) {
                    continue;
                }
                stack.push(Visit::Exit(t.clone()));
                if let Some(op) = t.op() {
                    for p in op.parents() {
                        if p.is_tracked() {
                            stack.push(Visit::Enter(p.clone()));
                        }
                    }
                }
            }
            Visit::Exit(t) => order.push(t),
        }
    }
    order
}

fn apply_vjp<S: Scalar>(op: &BackOp<S>, gout: &[S], sink: &mut GradSink<S>) {
    match op {
        BackOp::Add { a, b } => {
            if a.is_tracked() {
                sink.add(a, gout.to_vec());
            }
            if b.is_tracked() {
                sink.add(b, gout.to_vec());
            }
        }
        BackOp::Sub { a, b } => {
            if a.is_tracked() {
                sink.add(a, gout.to_vec());
            }
            if b.is_tracked() {
                let gb: Vec<S> = gout.iter().map(|&g| -g).collect();
                sink.add(b, gb);
            }
        }
        BackOp::Mul { a, b } => {
            if a.is_tracked() {
                let bd = b.data();
                let ga: Vec<S> = gout.iter().zip(bd.iter()).map(|(&g, &bv)| g * bv).collect();
                sink.add(a, ga);
            }
            if b.is_tracked() {
                let ad = a.data();
                let gb: Vec<S> = gout.iter().zip(ad.iter()).map(|(&g, &av)| g * av).collect();
                sink.add(b, gb);
            }
        }
        BackOp::Div { a, b } => {
            let bd = b.data();
            if a.is_tracked() {
                let ga: Vec<S> = gout.iter().zip(bd.iter()).map(|(&g, &bv)| g / bv).collect();
                sink.add(a, ga);
            }
            if b.is_tracked() {
                let ad = a.data();
                let gb: Vec<S> = gout
                    .iter()
                    .zip(ad.iter().zip(bd.iter()))
                    .map(|(&g, (&av, &bv))| -g * av / (bv * bv))
                    .collect();
                sink.add(b, gb);
            }
        }
        BackOp::Neg { a } => {
            if a.is_tracked() {
                let ga: Vec<S> = gout.iter().map(|&g| -g).collect();
                sink.add(a, ga);
            }
        }
        BackOp::Scale { a, k } => {
            if a.is_tracked() {
                let ga: Vec<S> = gout.iter().map(|&g| g * *k).collect();
                sink.add(a, ga);
            }
        }
        BackOp::AddScalar { a } => {
            if a.is_tracked() {
                sink.add(a, gout.to_vec());
            }
        }
        BackOp::Relu { a } => {
            if a.is_tracked() {
                let ad = a.data();
                let ga: Vec<S> = gout
                    .iter()
                    .zip(ad.iter())
                    .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                    .collect();
                sink.add(a, ga);
            }
        }
        BackOp::Gelu { a } => {
            if a.is_tracked() {
                let ad = a.data();
                let ga: Vec<S> = gout
                    .iter()
                    .zip(ad.iter())
                    .map(|(&g, &x)| g * (normal_cdf(x) + x * normal_pdf(x)))
                    .collect();
                sink.add(a, ga);
            }
        }
        BackOp::Softmax { a, axis, out } => {
            if a.is_tracked() {
                let shape = a.shape();
                let lanes = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let mut ga = vec![S::zero(); gout.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * lanes * inner + i;
                        let mut dot = S::zero();
                        for l in 0..lanes {
                            let idx = base + l * inner;
                            dot += gout[idx] * out[idx];
                        }
                        for l in 0..lanes {
                            let idx = base + l * inner;
                            ga[idx] = out[idx] * (gout[idx] - dot);
                        }
                    }
                }
                sink.add(a, ga);
            }
        }
        BackOp::LayerNorm { a, gain, offset, xhat, rstd } => {
            let d = *a.shape().last().unwrap();
            let rows = a.numel() / d;
            let g = gain.data();
            let inv_d = S::one() / S::from_usize(d);
            if a.is_tracked() {
                let mut ga = vec![S::zero(); a.numel()];
                for r in 0..rows {
                    let base = r * d;
                    let mut m1 = S::zero();
                    let mut m2 = S::zero();
                    for i in 0..d {
                        let dyg = gout[base + i] * g[i];
                        m1 += dyg;
                        m2 += dyg * xhat[base + i];
                    }
                    m1 = m1 * inv_d;
                    m2 = m2 * inv_d;
                    for i in 0..d {
                        let dyg = gout[base + i] * g[i];
                        ga[base + i] = rstd[r] * (dyg - m1 - xhat[base + i] * m2);
                    }
                }
                sink.add(a, ga);
            }
            if gain.is_tracked() {
                let mut gg = vec![S::zero(); d];
                for r in 0..rows {
                    for i in 0..d {
                        gg[i] += gout[r * d + i] * xhat[r * d + i];
                    }
                }
                sink.add(gain, gg);
            }
            if offset.is_tracked() {
                let mut gb = vec![S::zero(); d];
                for r in 0..rows {
                    for i in 0..d {
                        gb[i] += gout[r * d + i];
                    }
                }
                sink.add(offset, gb);
            }
        }
        BackOp::Matmul { a, b } => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.is_tracked() {
                let ga = mm_nt(gout, &b.data(), m, n, k);
                sink.add(a, ga);
            }
            if b.is_tracked() {
                let gb = mm_tn(&a.data(), gout, k, m, n);
                sink.add(b, gb);
            }
        }
        BackOp::Bmm { a, b } => {
            let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let n = b.shape()[2];
            let ad = a.data();
            let bd = b.data();
            if a.is_tracked() {
                let mut ga = vec![S::zero(); ad.len()];
                for bi in 0..bs {
                    let slice = mm_nt(&gout[bi * m * n..(bi + 1) * m * n], &bd[bi * k * n..(bi + 1) * k * n], m, n, k);
                    ga[bi * m * k..(bi + 1) * m * k].copy_from_slice(&slice);
                }
                sink.add(a, ga);
            }
            if b.is_tracked() {
                let mut gb = vec![S::zero(); bd.len()];
                for bi in 0..bs {
                    let slice = mm_tn(&ad[bi * m * k..(bi + 1) * m * k], &gout[bi * m * n..(bi + 1) * m * n], k, m, n);
                    gb[bi * k * n..(bi + 1) * k * n].copy_from_slice(&slice);
                }
                sink.add(b, gb);
            }
        }
        BackOp::Linear { x, w, bias } => {
            let (n, d_in) = (x.shape()[0], x.shape()[1]);
            let d_out = w.shape()[1];
            if x.is_tracked() {
                let gx = mm_nt(gout, &w.data(), n, d_out, d_in);
                sink.add(x, gx);
            }
            if w.is_tracked() {
                let gw = mm_tn(&x.data(), gout, d_in, n, d_out);
                sink.add(w, gw);
            }
            if let Some(b) = bias {
                if b.is_tracked() {
                    let mut gb = vec![S::zero(); d_out];
                    for row in gout.chunks(d_out) {
                        for (gbj, &gj) in gb.iter_mut().zip(row) {
                            *gbj += gj;
                        }
                    }
                    sink.add(b, gb);
                }
            }
        }
        BackOp::Conv2d { input, weight, bias, stride, padding, groups } => {
            let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let (cout, _, kh, kw) = (
                weight.shape()[0],
                weight.shape()[1],
                weight.shape()[2],
                weight.shape()[3],
            );
            let hout = super::ops::conv_out_dim(h, kh, *stride, *padding).unwrap();
            let wout = super::ops::conv_out_dim(w, kw, *stride, *padding).unwrap();
            let want_bias = bias.as_ref().map(|b| b.is_tracked()).unwrap_or(false);
            let (gx, gw, gb) = conv2d_bwd(
                &input.data(),
                cin,
                h,
                w,
                &weight.data(),
                cout,
                kh,
                kw,
                gout,
                *stride,
                *padding,
                *groups,
                hout,
                wout,
                want_bias,
            );
            if input.is_tracked() {
                sink.add(input, gx);
            }
            if weight.is_tracked() {
                sink.add(weight, gw);
            }
            if let (Some(b), Some(gb)) = (bias, gb) {
                sink.add(b, gb);
            }
        }
        BackOp::Reshape { a } => {
            if a.is_tracked() {
                sink.add(a, gout.to_vec());
            }
        }
        BackOp::Permute { a, perm } => {
            if a.is_tracked() {
                let out_shape: Vec<usize> = perm.iter().map(|&p| a.shape()[p]).collect();
                let mut inv = vec![0usize; perm.len()];
                for (d, &p) in perm.iter().enumerate() {
                    inv[p] = d;
                }
                let (ga, _) = permute_raw(gout, &out_shape, &inv);
                sink.add(a, ga);
            }
        }
        BackOp::Upsample2x { a } => {
            if a.is_tracked() {
                let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
                let (h2, w2) = (2 * h, 2 * w);
                let mut ga = vec![S::zero(); c * h * w];
                for ci in 0..c {
                    for y in 0..h2 {
                        let src = ci * h2 * w2 + y * w2;
                        let dst = ci * h * w + (y / 2) * w;
                        for x in 0..w2 {
                            ga[dst + x / 2] += gout[src + x];
                        }
                    }
                }
                sink.add(a, ga);
            }
        }
        BackOp::Sum { a } => {
            if a.is_tracked() {
                let ga = vec![gout[0]; a.numel()];
                sink.add(a, ga);
            }
        }
        BackOp::Mean { a } => {
            if a.is_tracked() {
                let ga = vec![gout[0] / S::from_usize(a.numel()); a.numel()];
                sink.add(a, ga);
            }
        }
        BackOp::Tv { a } => {
            if a.is_tracked() {
                let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
                let x = a.data();
                let g0 = gout[0];
                let mut ga = vec![S::zero(); x.len()];
                for ci in 0..c {
                    let base = ci * h * w;
                    for i in 0..h {
                        for j in 0..w {
                            if i + 1 < h {
                                let d = x[base + (i + 1) * w + j] - x[base + i * w + j];
                                let s = sign(d) * g0;
                                ga[base + (i + 1) * w + j] += s;
                                ga[base + i * w + j] -= s;
                            }
                            if j + 1 < w {
                                let d = x[base + i * w + j + 1] - x[base + i * w + j];
                                let s = sign(d) * g0;
                                ga[base + i * w + j + 1] += s;
                                ga[base + i * w + j] -= s;
                            }
                        }
                    }
                }
                sink.add(a, ga);
            }
        }
    }
}

/// Sign with the subgradient convention sign(0) = 0.
fn sign<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{grad_check, grad_check_params};
    use super::super::Parameter;
    use super::*;
    use crate::rng::SplitMix64;

    fn randv(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect()
    }

    #[test]
    fn sum_of_squares_gives_two_x() {
        let x = Tensor::<f64>::leaf(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, xi) in g.iter().zip(x.to_vec()) {
            assert_eq!(*gi, 2.0 * xi);
        }
    }

    #[test]
    fn unrelated_tensor_gets_no_gradient() {
        let x = Tensor::<f64>::leaf(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = Tensor::<f64>::leaf(vec![3], vec![4.0, 5.0, 6.0]).unwrap();
        let loss = y.sum();
        loss.backward().unwrap();
        assert!(x.grad().is_none());
        assert!(y.grad().is_some());
    }

    #[test]
    fn every_tracked_ancestor_gets_a_gradient() {
        let x = Tensor::<f64>::leaf(vec![3], vec![0.5, 1.0, 1.5]).unwrap();
        let mid = x.gelu();
        let out = mid.mul(&mid).unwrap();
        let loss = out.sum();
        loss.backward().unwrap();
        for (label, t) in [("x", &x), ("mid", &mid), ("out", &out), ("loss", &loss)] {
            assert!(t.grad().is_some(), "{label} has no gradient");
        }
    }

    #[test]
    fn backward_on_non_scalar_errors() {
        let x = Tensor::<f64>::leaf(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.scale(2.0);
        assert!(y.backward().is_err());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::<f64>::leaf(vec![2], vec![1.0, 2.0]).unwrap();
        let loss = x.sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(21);
        let b_data = randv(&mut rng, 9);
        let a = Tensor::<f64>::leaf(vec![3, 3], randv(&mut rng, 9)).unwrap();
        let report = grad_check(
            |a| {
                let b = Tensor::<f64>::from_vec(vec![3, 3], b_data.clone())?;
                Ok(a.matmul(&b)?.sum())
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-5, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn gelu_gradients_are_tight() {
        let mut rng = SplitMix64::new(22);
        let x = Tensor::<f64>::leaf(vec![8], randv(&mut rng, 8)).unwrap();
        let report = grad_check(|x| Ok(x.gelu().sum()), &x, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn linear_function_has_machine_epsilon_error() {
        let x = Tensor::<f64>::leaf(vec![5], vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let report = grad_check(|x| Ok(x.scale(3.0).sum()), &x, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-9, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn chain_rule_composition_checks_out() {
        // f(g(x)) with f = sum of squares, g = gelu(layer_norm-free path).
        let mut rng = SplitMix64::new(23);
        let x = Tensor::<f64>::leaf(vec![6], randv(&mut rng, 6)).unwrap();
        let report = grad_check(
            |x| {
                let g = x.gelu();
                Ok(g.mul(&g)?.sum())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn every_primitive_op_passes_gradcheck() {
        let mut rng = SplitMix64::new(24);
        let n = 12;
        type Case = (&'static str, Box<dyn Fn(&Tensor<f64>) -> crate::error::Result<Tensor<f64>>>);
        let other = Tensor::<f64>::from_vec(
            vec![n],
            (0..n).map(|i| 0.5 + 0.1 * i as f64).collect(),
        )
        .unwrap();
        let o2 = other.clone();
        let o3 = other.clone();
        let o4 = other.clone();
        let cases: Vec<Case> = vec![
            ("add", Box::new(move |x| Ok(x.add(&o2)?.sum()))),
            ("sub", Box::new(move |x| Ok(x.sub(&o3)?.sum()))),
            ("mul_div", Box::new(move |x| Ok(x.mul(x)?.div(&o4)?.sum()))),
            ("neg_scale", Box::new(|x| Ok(x.neg().scale(1.7).sum()))),
            ("relu", Box::new(|x| Ok(x.relu().sum()))),
            ("softmax", Box::new(|x| {
                let s = x.reshape(vec![3, 4])?.softmax(1)?;
                Ok(s.mul(&s)?.sum())
            })),
            ("mean", Box::new(|x| Ok(x.mul(x)?.mean()))),
            ("reshape_permute", Box::new(|x| {
                let p = x.reshape(vec![3, 4])?.permute(&[1, 0])?;
                Ok(p.mul(&p)?.sum())
            })),
            ("upsample", Box::new(|x| {
                let u = x.reshape(vec![3, 2, 2])?.upsample_nearest_2x()?;
                Ok(u.mul(&u)?.sum())
            })),
            ("tv", Box::new(|x| x.reshape(vec![1, 3, 4])?.tv2d())),
        ];
        for (name, f) in cases {
            let x = Tensor::<f64>::leaf(vec![n], randv(&mut rng, n)).unwrap();
            let report = grad_check(&f, &x, 1e-5).unwrap();
            assert!(
                report.max_rel_err < 1e-6,
                "{name}: rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn layer_norm_and_conv_params_pass_gradcheck() {
        let mut rng = SplitMix64::new(25);
        let x = Parameter::new("x", vec![2, 6, 6], randv(&mut rng, 72)).unwrap();
        let w = Parameter::new("w", vec![3, 2, 3, 3], randv(&mut rng, 54)).unwrap();
        let b = Parameter::new("b", vec![3], randv(&mut rng, 3)).unwrap();
        let gain = Parameter::new("gain", vec![6], randv(&mut rng, 6)).unwrap();
        let offset = Parameter::new("offset", vec![6], randv(&mut rng, 6)).unwrap();
        let f = || {
            let y = x
                .tensor()
                .conv2d(w.tensor(), Some(b.tensor()), 2, 1, 1)?
                .reshape(vec![3 * 3, 3])?
                .linear(
                    &Tensor::<f64>::from_vec(vec![3, 6], (0..18).map(|i| 0.05 * i as f64).collect())?,
                    None,
                )?
                .layer_norm(gain.tensor(), offset.tensor(), 1e-5)?;
            Ok(y.mul(&y)?.sum())
        };
        let report =
            grad_check_params(f, &[&x, &w, &b, &gain, &offset], 1e-5, usize::MAX, 7).unwrap();
        assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
    }
}
