//! Transformer-based SAR image despeckling, end to end at desk scale:
//! multiplicative gamma speckle simulation, a 5-stage hierarchical
//! transformer encoder with a convolutional projection decoder, composite
//! L2 + total-variation training, and PSNR/SSIM/ENL/Cx evaluation.
//!
//! Numeric code is generic over the scalar type ([`Scalar`]): f32 for
//! training speed, f64 for gradient checking. Concrete aliases live at the
//! crate root.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod speckle;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use model::{DespeckleNet, ModelConfig, StageConfig};
pub use scalar::{Dtype, Scalar};
pub use tensor::{Parameter, Tensor};

/// 32-bit tensor: the training precision.
pub type Tensor32 = Tensor<f32>;
/// 64-bit tensor: the gradient-checking precision.
pub type Tensor64 = Tensor<f64>;
/// The network at training precision.
pub type Net32 = DespeckleNet<f32>;
/// The network at gradient-checking precision.
pub type Net64 = DespeckleNet<f64>;
