use serde::{Deserialize, Serialize};

use super::sweep::build_run;
use super::train::TrainRun;
use crate::algebra::{equivalence_transform, fold_multipliers, layerwise_equivalence_transform, Parameterization, PerturbationRule, Q};
use crate::data::{Split, SyntheticSpec};
use crate::error::Result;
use crate::net::{Activation, Dims};
use crate::opt::{ScalingMode, StepConfig};

/// Largest relative output deviation accepted as the same trajectory.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-6;

fn default_width() -> usize {
    256
}
fn default_steps() -> usize {
    10
}
fn default_eta() -> f64 {
    0.05
}
fn default_rho() -> f64 {
    0.1
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_dataset() -> SyntheticSpec {
    SyntheticSpec {
        classes: 2,
        d_in: 16,
        n_per_class: 32,
        separation: 3.0,
        seed: 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceConfig {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_dataset")]
    pub dataset: SyntheticSpec,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// Trains both `(parameterization, rule)` pairs from the same raw normals and data order and
/// returns `max |f_t - f'_t| / (|f_t| + 1e-12)` over steps `0..=steps` and held-out outputs.
pub fn trajectory_deviation(
    first: (&Parameterization, &PerturbationRule),
    second: (&Parameterization, &PerturbationRule),
    cfg: &EquivalenceConfig,
) -> Result<f64> {
    let train = cfg.dataset.generate(Split::Train)?;
    let test = cfg.dataset.generate(Split::Test)?;
    let dims = Dims::new(train.d_in(), cfg.width, first.0.depth, train.classes)?;
    let mut runs = Vec::with_capacity(2);
    for (p, rule) in [first, second] {
        let (net, scales) = build_run(Some(p), rule, ScalingMode::Bcd, dims, cfg.activation, false, cfg.seed)?;
        runs.push(TrainRun::new(net, scales, StepConfig::new(cfg.eta, cfg.rho, rule.clone()), cfg.seed));
    }
    let mut worst: f64 = 0.0;
    for step in 0..=cfg.steps {
        if step > 0 {
            for r in &mut runs {
                r.step(&train)?;
            }
        }
        let f = runs[0].outputs(&test.inputs)?;
        let g = runs[1].outputs(&test.inputs)?;
        for (a, b) in f.iter().zip(g.iter()) {
            let dev = (a - b).abs() / (a.abs() + 1e-12);
            worst = worst.max(if dev.is_nan() { f64::INFINITY } else { dev });
        }
    }
    Ok(worst)
}

/// Joint-rule check of `(a+θ, b-θ, c-2θ, d_l-θ+C, d-θ)`.
pub fn equivalence_check(p: &Parameterization, theta: Q, shift: Q, cfg: &EquivalenceConfig) -> Result<f64> {
    let q = equivalence_transform(p, theta, shift);
    let rule = PerturbationRule::SamJointLp;
    trajectory_deviation((p, &rule), (&q, &rule), cfg)
}

/// Layerwise-normalized check of `(a+θ_l, b-θ_l, c-2θ_l, d_l-θ_l)`.
pub fn layerwise_equivalence_check(p: &Parameterization, theta: &[Q], cfg: &EquivalenceConfig) -> Result<f64> {
    let q = layerwise_equivalence_transform(p, theta)?;
    let rule = PerturbationRule::SamLayerwiseNorm;
    trajectory_deviation((p, &rule), (&q, &rule), cfg)
}

/// Joint rule with multipliers against its multiplier-free decoupled form.
pub fn multiplier_fold_check(p: &Parameterization, cfg: &EquivalenceConfig) -> Result<f64> {
    let (folded, rule) = fold_multipliers(p);
    trajectory_deviation((p, &PerturbationRule::SamJointLp), (&folded, &rule), cfg)
}
