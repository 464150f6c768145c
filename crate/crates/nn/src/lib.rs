//! Minimal tensor and layer library with hand-written backward passes.
//!
//! Layers cache what they need during `forward` and accumulate parameter
//! gradients during `backward`. Everything is generic over [`Real`] so the
//! same code trains in `f32` and is verified in `f64`.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod param;
pub mod scalar;
pub mod tensor;

pub use adam::Adam;
pub use error::{NnError, Result};
pub use gradcheck::{check_gradient, GradReport};
pub use init::Initializer;
pub use layers::{BatchNorm2d, Conv2d, ConvSpec, Gru, GruSpec, Linear, Relu};
pub use loss::smooth_l1;
pub use param::{Param, Parameters, Phase};
pub use scalar::Real;
pub use tensor::{flatten, Tensor};
