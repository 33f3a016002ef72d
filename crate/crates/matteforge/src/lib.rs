//! Desk-scale natural image matting toolkit: alpha compositing and dataset
//! synthesis, robustness-oriented trimap generation, a dual-path matting
//! network with its losses, the four standard matting metrics, and the
//! training/inference/evaluation pipeline behind the `matteforge` CLI.

pub mod engine;
pub mod error;
pub mod imaging;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod trimap;

pub use error::{MatteError, Result};
pub use scalar::Scalar;

/// Single-precision tensor, the training default.
pub type Tensor32 = engine::Tensor<f32>;
/// Double-precision tensor, used by gradient-check tests.
pub type Tensor64 = engine::Tensor<f64>;
