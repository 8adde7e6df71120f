//! Encoder building blocks: overlap patch embedding, spatially reduced
//! multi-head attention, and the transformer block.

use super::init::Init;
use super::{Mode, StageConfig};
use crate::error::{Error, Result};
use crate::rng::{SplitMix64, STREAM_INIT};
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};

pub(crate) const LN_EPS: f64 = 1e-5;

fn ln_params<S: Scalar>(prefix: &str, dim: usize, init: &mut Init) -> Result<(Parameter<S>, Parameter<S>)> {
    let gain = Parameter::new(format!("{prefix}.gain"), vec![dim], init.ones(dim))?;
    let offset = Parameter::new(format!("{prefix}.offset"), vec![dim], init.zeros(dim))?;
    Ok((gain, offset))
}

fn linear_params<S: Scalar>(
    prefix: &str,
    d_in: usize,
    d_out: usize,
    init: &mut Init,
) -> Result<(Parameter<S>, Parameter<S>)> {
    let w = Parameter::new(
        format!("{prefix}.weight"),
        vec![d_in, d_out],
        init.trunc_normal(d_in * d_out),
    )?;
    let b = Parameter::new(format!("{prefix}.bias"), vec![d_out], init.zeros(d_out))?;
    Ok((w, b))
}

fn conv_params<S: Scalar>(
    prefix: &str,
    cout: usize,
    cpg: usize,
    kh: usize,
    kw: usize,
    init: &mut Init,
) -> Result<(Parameter<S>, Parameter<S>)> {
    let fan_in = cpg * kh * kw;
    let w = Parameter::new(
        format!("{prefix}.weight"),
        vec![cout, cpg, kh, kw],
        init.uniform_fan_in(cout * cpg * kh * kw, fan_in),
    )?;
    let b = Parameter::new(format!("{prefix}.bias"), vec![cout], init.zeros(cout))?;
    Ok((w, b))
}

/// Strided convolution that merges overlapping patches into token embeddings,
/// halving the spatial resolution, followed by layer norm over the embedding.
pub struct OverlapPatchEmbed<S: Scalar> {
    conv_w: Parameter<S>,
    conv_b: Parameter<S>,
    ln_gain: Parameter<S>,
    ln_offset: Parameter<S>,
    stride: usize,
    padding: usize,
}

impl<S: Scalar> OverlapPatchEmbed<S> {
    /// Standalone embedding block with seeded initialization.
    pub fn with_seed(prefix: &str, in_channels: usize, cfg: &StageConfig, seed: u64) -> Result<Self> {
        let mut init = Init::new(SplitMix64::derive(seed, &[STREAM_INIT]));
        Self::new(prefix, in_channels, cfg, &mut init)
    }

    pub(crate) fn new(prefix: &str, in_channels: usize, cfg: &StageConfig, init: &mut Init) -> Result<Self> {
        let (conv_w, conv_b) = conv_params(
            &format!("{prefix}.conv"),
            cfg.embed_dim,
            in_channels,
            cfg.kernel,
            cfg.kernel,
            init,
        )?;
        let (ln_gain, ln_offset) = ln_params(&format!("{prefix}.norm"), cfg.embed_dim, init)?;
        Ok(OverlapPatchEmbed {
            conv_w,
            conv_b,
            ln_gain,
            ln_offset,
            stride: cfg.stride,
            padding: cfg.padding,
        })
    }

    /// `[C,H,W] -> ([N,e] tokens, H', W')` with `H' = ceil(H/2)`.
    pub fn forward(&self, x: &Tensor<S>, training: bool) -> Result<(Tensor<S>, usize, usize)> {
        let map = x.conv2d(
            &self.conv_w.view(training),
            Some(&self.conv_b.view(training)),
            self.stride,
            self.padding,
            1,
        )?;
        let (e, hp, wp) = (map.shape()[0], map.shape()[1], map.shape()[2]);
        let tokens = map
            .reshape(vec![e, hp * wp])?
            .permute(&[1, 0])?
            .layer_norm(
                &self.ln_gain.view(training),
                &self.ln_offset.view(training),
                S::from_f64(LN_EPS),
            )?;
        Ok((tokens, hp, wp))
    }

    pub fn parameters(&self) -> Vec<&Parameter<S>> {
        vec![&self.conv_w, &self.conv_b, &self.ln_gain, &self.ln_offset]
    }
}

/// Multi-head attention with the pyramid-transformer reduction: keys and
/// values come from tokens spatially reduced by an RxR stride-R convolution
/// plus layer norm, cutting the score matrix from N^2 to N^2/R^2. With R = 1
/// the reduction path disappears and this is plain multi-head attention.
pub struct EfficientAttention<S: Scalar> {
    pub(crate) q_w: Parameter<S>,
    pub(crate) q_b: Parameter<S>,
    pub(crate) k_w: Parameter<S>,
    pub(crate) v_w: Parameter<S>,
    pub(crate) v_b: Parameter<S>,
    pub(crate) out_w: Parameter<S>,
    pub(crate) out_b: Parameter<S>,
    reduce: Option<SpatialReduction<S>>,
    pub(crate) heads: usize,
    reduction: usize,
}

struct SpatialReduction<S: Scalar> {
    conv_w: Parameter<S>,
    conv_b: Parameter<S>,
    ln_gain: Parameter<S>,
    ln_offset: Parameter<S>,
}

impl<S: Scalar> EfficientAttention<S> {
    /// Standalone attention layer with seeded initialization.
    pub fn with_seed(prefix: &str, cfg: &StageConfig, seed: u64) -> Result<Self> {
        let mut init = Init::new(SplitMix64::derive(seed, &[STREAM_INIT]));
        Self::new(prefix, cfg, &mut init)
    }

    pub(crate) fn new(prefix: &str, cfg: &StageConfig, init: &mut Init) -> Result<Self> {
        let e = cfg.embed_dim;
        let (q_w, q_b) = linear_params(&format!("{prefix}.q_proj"), e, e, init)?;
        // No key bias: softmax normalizes over keys, so a shared shift of
        // every key cancels exactly and the parameter would never learn.
        let k_w = Parameter::new(
            format!("{prefix}.k_proj.weight"),
            vec![e, e],
            init.trunc_normal(e * e),
        )?;
        let (v_w, v_b) = linear_params(&format!("{prefix}.v_proj"), e, e, init)?;
        let (out_w, out_b) = linear_params(&format!("{prefix}.out_proj"), e, e, init)?;
        let reduce = if cfg.reduction > 1 {
            let (conv_w, conv_b) = conv_params(
                &format!("{prefix}.sr.conv"),
                e,
                e,
                cfg.reduction,
                cfg.reduction,
                init,
            )?;
            let (ln_gain, ln_offset) = ln_params(&format!("{prefix}.sr.norm"), e, init)?;
            Some(SpatialReduction {
                conv_w,
                conv_b,
                ln_gain,
                ln_offset,
            })
        } else {
            None
        };
        Ok(EfficientAttention {
            q_w,
            q_b,
            k_w,
            v_w,
            v_b,
            out_w,
            out_b,
            reduce,
            heads: cfg.heads,
            reduction: cfg.reduction,
        })
    }

    /// Scaled dot-product attention over `[N,e]` tokens laid out on an
    /// `H' x W'` grid.
    pub fn forward(&self, tokens: &Tensor<S>, hp: usize, wp: usize, training: bool) -> Result<Tensor<S>> {
        let (n, e) = (tokens.shape()[0], tokens.shape()[1]);
        if n != hp * wp {
            return Err(Error::shape(format!(
                "efficient_attention: {n} tokens do not tile a {hp}x{wp} grid"
            )));
        }
        let heads = self.heads;
        let d = e / heads;

        let q = tokens.linear(&self.q_w.view(training), Some(&self.q_b.view(training)))?;
        let kv_src = match &self.reduce {
            Some(sr) => {
                let r = self.reduction;
                if hp % r != 0 || wp % r != 0 {
                    return Err(Error::shape(format!(
                        "efficient_attention: grid {hp}x{wp} is not divisible by reduction ratio {r}"
                    )));
                }
                tokens
                    .permute(&[1, 0])?
                    .reshape(vec![e, hp, wp])?
                    .conv2d(&sr.conv_w.view(training), Some(&sr.conv_b.view(training)), r, 0, 1)?
                    .reshape(vec![e, (hp / r) * (wp / r)])?
                    .permute(&[1, 0])?
                    .layer_norm(
                        &sr.ln_gain.view(training),
                        &sr.ln_offset.view(training),
                        S::from_f64(LN_EPS),
                    )?
            }
            None => tokens.clone(),
        };
        let m = kv_src.shape()[0];
        let k = kv_src.linear(&self.k_w.view(training), None)?;
        let v = kv_src.linear(&self.v_w.view(training), Some(&self.v_b.view(training)))?;

        let qh = q.reshape(vec![n, heads, d])?.permute(&[1, 0, 2])?;
        let kt = k.reshape(vec![m, heads, d])?.permute(&[1, 2, 0])?;
        let vh = v.reshape(vec![m, heads, d])?.permute(&[1, 0, 2])?;

        let scale = S::one() / S::from_usize(d).sqrt();
        let scores = qh.bmm(&kt)?.scale(scale).softmax(2)?;
        let ctx = scores
            .bmm(&vh)?
            .permute(&[1, 0, 2])?
            .reshape(vec![n, e])?;
        ctx.linear(&self.out_w.view(training), Some(&self.out_b.view(training)))
    }

    pub fn parameters(&self) -> Vec<&Parameter<S>> {
        let mut p = vec![
            &self.q_w, &self.q_b, &self.k_w, &self.v_w, &self.v_b, &self.out_w, &self.out_b,
        ];
        if let Some(sr) = &self.reduce {
            p.extend([&sr.conv_w, &sr.conv_b, &sr.ln_gain, &sr.ln_offset]);
        }
        p
    }
}

/// Pre-norm transformer block: attention with a residual, then a depth-wise
/// convolution (the positional signal), GELU, dropout, and one linear layer,
/// closed by the second residual.
pub struct TransformerBlock<S: Scalar> {
    pub(crate) ln1_gain: Parameter<S>,
    pub(crate) ln1_offset: Parameter<S>,
    pub(crate) attn: EfficientAttention<S>,
    pub(crate) ln2_gain: Parameter<S>,
    pub(crate) ln2_offset: Parameter<S>,
    pub(crate) dwc_w: Parameter<S>,
    pub(crate) dwc_b: Parameter<S>,
    pub(crate) mlp_w: Parameter<S>,
    pub(crate) mlp_b: Parameter<S>,
    dropout: f64,
}

impl<S: Scalar> TransformerBlock<S> {
    /// Standalone block with seeded initialization.
    pub fn with_seed(prefix: &str, cfg: &StageConfig, seed: u64) -> Result<Self> {
        let mut init = Init::new(SplitMix64::derive(seed, &[STREAM_INIT]));
        Self::new(prefix, cfg, &mut init)
    }

    /// The attention sublayer.
    pub fn attention(&self) -> &EfficientAttention<S> {
        &self.attn
    }

    pub(crate) fn new(prefix: &str, cfg: &StageConfig, init: &mut Init) -> Result<Self> {
        let e = cfg.embed_dim;
        let (ln1_gain, ln1_offset) = ln_params(&format!("{prefix}.norm1"), e, init)?;
        let attn = EfficientAttention::new(&format!("{prefix}.attn"), cfg, init)?;
        let (ln2_gain, ln2_offset) = ln_params(&format!("{prefix}.norm2"), e, init)?;
        let (dwc_w, dwc_b) = conv_params(&format!("{prefix}.dwc"), e, 1, 3, 3, init)?;
        let (mlp_w, mlp_b) = linear_params(&format!("{prefix}.mlp"), e, cfg.mlp_dim, init)?;
        Ok(TransformerBlock {
            ln1_gain,
            ln1_offset,
            attn,
            ln2_gain,
            ln2_offset,
            dwc_w,
            dwc_b,
            mlp_w,
            mlp_b,
            dropout: cfg.dropout,
        })
    }

    /// The attention half: `X = MHA(LN(I)) + I`.
    pub fn attention_residual(
        &self,
        tokens: &Tensor<S>,
        hp: usize,
        wp: usize,
        training: bool,
    ) -> Result<Tensor<S>> {
        let normed = tokens.layer_norm(
            &self.ln1_gain.view(training),
            &self.ln1_offset.view(training),
            S::from_f64(LN_EPS),
        )?;
        self.attn.forward(&normed, hp, wp, training)?.add(tokens)
    }

    pub fn forward(
        &self,
        tokens: &Tensor<S>,
        hp: usize,
        wp: usize,
        mode: &mut Mode<'_>,
    ) -> Result<Tensor<S>> {
        let training = mode.training();
        let (n, e) = (tokens.shape()[0], tokens.shape()[1]);
        let eps = S::from_f64(LN_EPS);

        let x = self.attention_residual(tokens, hp, wp, training)?;

        // T = MLP(dropout(GELU(DWC(LN(X))))) + X
        let mut t = x
            .layer_norm(
                &self.ln2_gain.view(training),
                &self.ln2_offset.view(training),
                eps,
            )?
            .permute(&[1, 0])?
            .reshape(vec![e, hp, wp])?
            .conv2d(&self.dwc_w.view(training), Some(&self.dwc_b.view(training)), 1, 1, e)?
            .reshape(vec![e, n])?
            .permute(&[1, 0])?
            .gelu();
        if self.dropout > 0.0 {
            if let Mode::Train { dropout: rng } = mode {
                let keep = 1.0 - self.dropout;
                let mask: Vec<S> = (0..t.numel())
                    .map(|_| {
                        if rng.next_f64() < self.dropout {
                            S::zero()
                        } else {
                            S::from_f64(1.0 / keep)
                        }
                    })
                    .collect();
                let mask = Tensor::from_vec(t.shape().to_vec(), mask)?;
                t = t.mul(&mask)?;
            }
        }
        t.linear(&self.mlp_w.view(training), Some(&self.mlp_b.view(training)))?
            .add(&x)
    }

    pub fn parameters(&self) -> Vec<&Parameter<S>> {
        let mut p = vec![&self.ln1_gain, &self.ln1_offset];
        p.extend(self.attn.parameters());
        p.extend([
            &self.ln2_gain,
            &self.ln2_offset,
            &self.dwc_w,
            &self.dwc_b,
            &self.mlp_w,
            &self.mlp_b,
        ]);
        p
    }
}

/// One encoder stage: overlap patch embedding plus a transformer block,
/// returning the token grid reshaped back to a feature map.
pub struct EncoderStage<S: Scalar> {
    pub(crate) ope: OverlapPatchEmbed<S>,
    pub(crate) block: TransformerBlock<S>,
    embed_dim: usize,
}

impl<S: Scalar> EncoderStage<S> {
    pub(crate) fn new(prefix: &str, in_channels: usize, cfg: &StageConfig, init: &mut Init) -> Result<Self> {
        Ok(EncoderStage {
            ope: OverlapPatchEmbed::new(&format!("{prefix}.ope"), in_channels, cfg, init)?,
            block: TransformerBlock::new(&format!("{prefix}.block"), cfg, init)?,
            embed_dim: cfg.embed_dim,
        })
    }

    /// `[C,H,W] -> [e, H/2, W/2]`.
    pub fn forward(&self, x: &Tensor<S>, mode: &mut Mode<'_>) -> Result<Tensor<S>> {
        let (tokens, hp, wp) = self.ope.forward(x, mode.training())?;
        let tokens = self.block.forward(&tokens, hp, wp, mode)?;
        tokens.permute(&[1, 0])?.reshape(vec![self.embed_dim, hp, wp])
    }

    pub fn parameters(&self) -> Vec<&Parameter<S>> {
        let mut p = self.ope.parameters();
        p.extend(self.block.parameters());
        p
    }
}
