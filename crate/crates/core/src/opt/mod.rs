//! SGD and the sharpness-aware perturbation rules with layerwise width scaling.

pub mod perturb;
pub mod scales;
pub mod step;

pub use perturb::{compute_perturbation, DenominatorNorm, PerturbStep};
pub use scales::{LayerScales, ScalingMode};
pub use step::{sam_step, sam_step_with, sgd_step, SamScratch, Batch, StepConfig, StepTelemetry, DIVERGENCE_LIMIT};
