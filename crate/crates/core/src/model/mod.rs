//! The despeckling network: a hierarchical transformer encoder (overlap
//! patch embedding + transformer block per stage, resolution halved at each)
//! feeding a convolutional projection decoder that restores full resolution.

#[cfg(test)]
mod tests;

mod decoder;
mod init;
mod layers;

pub use decoder::ResidualBlock;
pub use layers::{EfficientAttention, EncoderStage, OverlapPatchEmbed, TransformerBlock};

use crate::error::{Error, Result};
use crate::rng::{SplitMix64, STREAM_INIT};
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};

use self::decoder::Decoder;
use self::init::Init;

/// Hyperparameters of one encoder stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub kernel: usize,
    pub embed_dim: usize,
    pub stride: usize,
    pub padding: usize,
    pub heads: usize,
    /// Spatial reduction ratio of keys/values inside attention.
    pub reduction: usize,
    pub mlp_dim: usize,
    pub dropout: f64,
}

impl StageConfig {
    /// Stage with the fixed conventions: stride 2, padding k/2, MLP width
    /// equal to the embedding.
    pub fn new(kernel: usize, embed_dim: usize, heads: usize, reduction: usize) -> Self {
        StageConfig {
            kernel,
            embed_dim,
            stride: 2,
            padding: kernel / 2,
            heads,
            reduction,
            mlp_dim: embed_dim,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub stages: Vec<StageConfig>,
    /// Channel width of the decoder fusion path.
    pub decoder_dim: usize,
    pub in_channels: usize,
}

impl ModelConfig {
    /// The full five-stage architecture: kernels 7,3,3,3,3; embeddings
    /// 32,64,128,320,512; heads 1,1,2,4,8; reduction 2 everywhere;
    /// decoder width 64.
    pub fn paper() -> Self {
        let dims = [32, 64, 128, 320, 512];
        let kernels = [7, 3, 3, 3, 3];
        let heads = [1, 1, 2, 4, 8];
        ModelConfig {
            stages: (0..5)
                .map(|i| StageConfig::new(kernels[i], dims[i], heads[i], 2))
                .collect(),
            decoder_dim: 64,
            in_channels: 1,
        }
    }

    /// Reduced three-stage preset for fast tests and desk-scale runs.
    pub fn desk() -> Self {
        let dims = [16, 32, 64];
        let kernels = [7, 3, 3];
        let heads = [1, 1, 2];
        ModelConfig {
            stages: (0..3)
                .map(|i| StageConfig::new(kernels[i], dims[i], heads[i], 2))
                .collect(),
            decoder_dim: 32,
            in_channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("model needs at least one stage".into()));
        }
        if self.decoder_dim == 0 || self.in_channels == 0 {
            return Err(Error::Config("decoder_dim and in_channels must be >= 1".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let stage = i + 1;
            if s.kernel == 0 || s.embed_dim == 0 || s.heads == 0 {
                return Err(Error::Config(format!(
                    "stage {stage}: kernel, embed_dim, and heads must be >= 1"
                )));
            }
            if s.stride != 2 {
                return Err(Error::Config(format!(
                    "stage {stage}: stride must be 2 (got {})",
                    s.stride
                )));
            }
            if s.padding != s.kernel / 2 {
                return Err(Error::Config(format!(
                    "stage {stage}: padding must be kernel/2 = {} (got {})",
                    s.kernel / 2,
                    s.padding
                )));
            }
            if s.embed_dim % s.heads != 0 {
                return Err(Error::Config(format!(
                    "stage {stage}: embed_dim {} not divisible by heads {}",
                    s.embed_dim, s.heads
                )));
            }
            if s.reduction == 0 {
                return Err(Error::Config(format!("stage {stage}: reduction must be >= 1")));
            }
            if s.mlp_dim != s.embed_dim {
                return Err(Error::Config(format!(
                    "stage {stage}: mlp_dim {} must equal embed_dim {} for the residual",
                    s.mlp_dim, s.embed_dim
                )));
            }
            if !(0.0..1.0).contains(&s.dropout) {
                return Err(Error::Config(format!(
                    "stage {stage}: dropout {} outside [0,1)",
                    s.dropout
                )));
            }
        }
        Ok(())
    }

    /// Input extents must be divisible by this: every stage halves the
    /// resolution, and each attention reduction conv must tile its grid.
    pub fn required_divisor(&self) -> usize {
        fn gcd(a: usize, b: usize) -> usize {
            if b == 0 { a } else { gcd(b, a % b) }
        }
        let mut div = 1usize << self.stages.len();
        for (i, s) in self.stages.iter().enumerate() {
            if s.reduction > 1 {
                let need = (1usize << (i + 1)) * s.reduction;
                div = div / gcd(div, need) * need;
            }
        }
        div
    }

    /// Analytic parameter count; the same formulas are spelled out in the
    /// README and verified against the built model in tests.
    pub fn parameter_count(&self) -> usize {
        let mut total = 0usize;
        let mut cin = self.in_channels;
        for s in &self.stages {
            let e = s.embed_dim;
            let k = s.kernel;
            total += e * cin * k * k + e; // OPE conv
            total += 2 * e; // OPE norm
            total += 2 * e; // block norm1
            total += 4 * e * e + 3 * e; // q/k/v/out projections (k has no bias)
            if s.reduction > 1 {
                total += e * e * s.reduction * s.reduction + e; // sr conv
                total += 2 * e; // sr norm
            }
            total += 2 * e; // block norm2
            total += e * 9 + e; // depth-wise conv
            total += e * s.mlp_dim + s.mlp_dim; // mlp linear
            cin = e;
        }
        let d = self.decoder_dim;
        let e_last = self.stages.last().unwrap().embed_dim;
        total += d * e_last * 9 + d; // top projection
        for s in self.stages.iter().rev().skip(1) {
            total += d * d * 9 + d; // upsample conv
            total += d * s.embed_dim + d; // 1x1 skip projection
            total += 2 * (d * d * 9 + d); // residual block
        }
        total += d * d * 9 + d; // final upsample conv
        total += d * 9 + 1; // head
        total
    }
}

/// Per-stage feature maps `[e_i, H/2^i, W/2^i]`, shallowest first.
pub struct FeaturePyramid<S: Scalar> {
    pub maps: Vec<Tensor<S>>,
}

impl<S: Scalar> FeaturePyramid<S> {
    pub fn map(&self, stage: usize) -> &Tensor<S> {
        &self.maps[stage]
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// Forward-pass mode. Training tracks gradients and draws dropout masks from
/// the supplied stream; eval detaches parameters and is deterministic.
pub enum Mode<'a> {
    Eval,
    Train { dropout: &'a mut SplitMix64 },
}

impl Mode<'_> {
    pub fn training(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

pub struct DespeckleNet<S: Scalar> {
    cfg: ModelConfig,
    stages: Vec<EncoderStage<S>>,
    decoder: Decoder<S>,
}

impl<S: Scalar> std::fmt::Debug for DespeckleNet<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DespeckleNet")
            .field("stages", &self.cfg.stages.len())
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

impl<S: Scalar> DespeckleNet<S> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(SplitMix64::derive(seed, &[STREAM_INIT]));
        let mut stages = Vec::with_capacity(cfg.stages.len());
        let mut cin = cfg.in_channels;
        for (i, stage_cfg) in cfg.stages.iter().enumerate() {
            stages.push(EncoderStage::new(
                &format!("encoder.stage{}", i + 1),
                cin,
                stage_cfg,
                &mut init,
            )?);
            cin = stage_cfg.embed_dim;
        }
        let decoder = Decoder::new(&cfg, &mut init)?;
        let net = DespeckleNet { cfg, stages, decoder };
        net.check_unique_names()?;
        Ok(net)
    }

    fn check_unique_names(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for p in self.parameters() {
            if !seen.insert(p.name().to_string()) {
                return Err(Error::Config(format!(
                    "duplicate parameter name '{}'",
                    p.name()
                )));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// All learnable parameters in a stable construction order.
    pub fn parameters(&self) -> Vec<&Parameter<S>> {
        let mut p = Vec::new();
        for s in &self.stages {
            p.extend(s.parameters());
        }
        p.extend(self.decoder.parameters());
        p
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    pub fn stage(&self, i: usize) -> &EncoderStage<S> {
        &self.stages[i]
    }

    fn validate_input(&self, x: &Tensor<S>) -> Result<()> {
        let want_c = self.cfg.in_channels;
        let div = self.cfg.required_divisor();
        match x.shape() {
            [c, h, w] if *c == want_c && h % div == 0 && w % div == 0 => Ok(()),
            [c, _, _] if *c != want_c => Err(Error::shape(format!(
                "input has {c} channels, model expects {want_c}"
            ))),
            [_, h, w] => Err(Error::shape(format!(
                "input {h}x{w} must have both extents divisible by {div} \
                 (stage halvings plus the attention reduction)"
            ))),
            other => Err(Error::shape(format!(
                "input must be [C,H,W], got {other:?}"
            ))),
        }
    }

    /// Run the encoder, recording each stage's feature map.
    pub fn encoder_forward(&self, x: &Tensor<S>, mode: &mut Mode<'_>) -> Result<FeaturePyramid<S>> {
        self.validate_input(x)?;
        let mut maps = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for (i, stage) in self.stages.iter().enumerate() {
            cur = stage.forward(&cur, mode).map_err(|e| {
                Error::shape(format!("encoder stage {}: {e}", i + 1))
            })?;
            maps.push(cur.clone());
        }
        Ok(FeaturePyramid { maps })
    }

    pub fn decoder_forward(&self, pyramid: &FeaturePyramid<S>, mode: &Mode<'_>) -> Result<Tensor<S>> {
        if pyramid.len() != self.stages.len() {
            return Err(Error::shape(format!(
                "pyramid has {} maps, model has {} stages",
                pyramid.len(),
                self.stages.len()
            )));
        }
        self.decoder.forward(&pyramid.maps, mode.training())
    }

    /// Full despeckling forward: `[1,H,W]` speckled in, `[1,H,W]` estimate
    /// out. The output is the raw head value; clamp at inference when a
    /// physical intensity is needed.
    pub fn forward(&self, x: &Tensor<S>, mode: &mut Mode<'_>) -> Result<Tensor<S>> {
        let pyramid = self.encoder_forward(x, mode)?;
        self.decoder_forward(&pyramid, mode)
    }

    /// Inference convenience: eval mode, output clamped to [0, +inf).
    pub fn despeckle(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let raw = self.forward(x, &mut Mode::Eval)?;
        Ok(raw.map_detached(|v| v.max(S::zero())))
    }
}
