pub mod config;
pub mod dataset;
pub mod elastomer;
pub mod error;
pub mod experiments;
pub mod fusion;
pub mod magnetics;
pub mod render;

pub use config::{Preset, SimConfig};
pub use error::{Error, Result};
