//! Convolutional projection decoder: deepest-first progressive fusion. The
//! top of the pyramid is projected to the decoder width, then each shallower
//! skip joins through upsample -> 1x1-projected addition -> residual block,
//! and a final upsample plus 3x3 head restores the input resolution at one
//! channel.

use super::init::Init;
use super::ModelConfig;
use crate::error::Result;
use crate::rng::{SplitMix64, STREAM_INIT};
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};

struct Conv<S: Scalar> {
    w: Parameter<S>,
    b: Parameter<S>,
    padding: usize,
}

impl<S: Scalar> Conv<S> {
    fn new(prefix: &str, cin: usize, cout: usize, kernel: usize, init: &mut Init) -> Result<Self> {
        let fan_in = cin * kernel * kernel;
        let w = Parameter::new(
            format!("{prefix}.weight"),
            vec![cout, cin, kernel, kernel],
            init.uniform_fan_in(cout * cin * kernel * kernel, fan_in),
        )?;
        let b = Parameter::new(format!("{prefix}.bias"), vec![cout], init.zeros(cout))?;
        Ok(Conv {
            w,
            b,
            padding: kernel / 2,
        })
    }

    fn forward(&self, x: &Tensor<S>, training: bool) -> Result<Tensor<S>> {
        x.conv2d(
            &self.w.view(training),
            Some(&self.b.view(training)),
            1,
            self.padding,
            1,
        )
    }

    fn parameters(&self) -> Vec<&Parameter<S>> {
        vec![&self.w, &self.b]
    }
}

/// `RB(I) = Conv3x3(ReLU(Conv3x3(I))) + I`.
pub struct ResidualBlock<S: Scalar> {
    conv1: Conv<S>,
    conv2: Conv<S>,
}

impl<S: Scalar> ResidualBlock<S> {
    /// Standalone residual block with seeded initialization.
    pub fn with_seed(prefix: &str, dim: usize, seed: u64) -> Result<Self> {
        let mut init = Init::new(SplitMix64::derive(seed, &[STREAM_INIT]));
        Self::new(prefix, dim, &mut init)
    }

    pub(crate) fn new(prefix: &str, dim: usize, init: &mut Init) -> Result<Self> {
        Ok(ResidualBlock {
            conv1: Conv::new(&format!("{prefix}.conv1"), dim, dim, 3, init)?,
            conv2: Conv::new(&format!("{prefix}.conv2"), dim, dim, 3, init)?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>, training: bool) -> Result<Tensor<S>> {
        self.conv2
            .forward(&self.conv1.forward(x, training)?.relu(), training)?
            .add(x)
    }

    pub fn parameters(&self) -> Vec<&Parameter<S>> {
        let mut p = self.conv1.parameters();
        p.extend(self.conv2.parameters());
        p
    }
}

/// Nearest-neighbor 2x upsample followed by a 3x3 convolution.
struct UpBlock<S: Scalar> {
    conv: Conv<S>,
}

impl<S: Scalar> UpBlock<S> {
    fn new(prefix: &str, dim: usize, init: &mut Init) -> Result<Self> {
        Ok(UpBlock {
            conv: Conv::new(&format!("{prefix}.conv"), dim, dim, 3, init)?,
        })
    }

    fn forward(&self, x: &Tensor<S>, training: bool) -> Result<Tensor<S>> {
        self.conv.forward(&x.upsample_nearest_2x()?, training)
    }

    fn parameters(&self) -> Vec<&Parameter<S>> {
        self.conv.parameters()
    }
}

struct FusionScale<S: Scalar> {
    up: UpBlock<S>,
    skip: Conv<S>,
    rb: ResidualBlock<S>,
}

pub struct Decoder<S: Scalar> {
    top_proj: Conv<S>,
    /// Deepest-first: scales[0] fuses the second-deepest stage map.
    scales: Vec<FusionScale<S>>,
    final_up: UpBlock<S>,
    head: Conv<S>,
}

impl<S: Scalar> Decoder<S> {
    pub fn new(cfg: &ModelConfig, init: &mut Init) -> Result<Self> {
        let d = cfg.decoder_dim;
        let n = cfg.stages.len();
        let top_proj = Conv::new("decoder.proj", cfg.stages[n - 1].embed_dim, d, 3, init)?;
        let mut scales = Vec::with_capacity(n - 1);
        for (si, stage) in cfg.stages.iter().enumerate().rev().skip(1) {
            let prefix = format!("decoder.scale{}", si + 1);
            scales.push(FusionScale {
                up: UpBlock::new(&format!("{prefix}.up"), d, init)?,
                skip: Conv::new(&format!("{prefix}.skip"), stage.embed_dim, d, 1, init)?,
                rb: ResidualBlock::new(&format!("{prefix}.rb"), d, init)?,
            });
        }
        let final_up = UpBlock::new("decoder.final_up", d, init)?;
        let head = Conv::new("decoder.head", d, 1, 3, init)?;
        Ok(Decoder {
            top_proj,
            scales,
            final_up,
            head,
        })
    }

    /// Fuse the per-stage maps (shallowest first in `maps`) into a `[1,H,W]`
    /// image at the original resolution.
    pub fn forward(&self, maps: &[Tensor<S>], training: bool) -> Result<Tensor<S>> {
        let mut x = self.top_proj.forward(maps.last().unwrap(), training)?;
        for (scale, map) in self.scales.iter().zip(maps.iter().rev().skip(1)) {
            x = scale.up.forward(&x, training)?;
            x = x.add(&scale.skip.forward(map, training)?)?;
            x = scale.rb.forward(&x, training)?;
        }
        self.head.forward(&self.final_up.forward(&x, training)?, training)
    }

    pub fn parameters(&self) -> Vec<&Parameter<S>> {
        let mut p = self.top_proj.parameters();
        for s in &self.scales {
            p.extend(s.up.parameters());
            p.extend(s.skip.parameters());
            p.extend(s.rb.parameters());
        }
        p.extend(self.final_up.parameters());
        p.extend(self.head.parameters());
        p
    }
}
