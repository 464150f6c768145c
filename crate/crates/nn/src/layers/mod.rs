pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod gru;
pub mod linear;

pub use activation::{sigmoid, Relu};
pub use batchnorm::BatchNorm2d;
pub use conv::{Conv2d, ConvSpec};
pub use gru::{Gru, GruSpec};
pub use linear::Linear;
