//! Width-scaling algebra and empirical lab for sharpness-aware training of MLPs.

pub mod algebra;
pub mod data;
pub mod error;
pub mod lab;
pub mod net;
pub mod opt;

pub use algebra::*;
pub use error::{Error, Result};
pub use net::{Activation, Dims, GradientSet, InitSpec, Loss, Network, PassCache};
pub use opt::{sam_step, sgd_step, Batch, LayerScales, StepConfig, StepTelemetry};
