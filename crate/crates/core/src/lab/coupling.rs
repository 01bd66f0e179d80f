use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::build_run;
use super::train::TrainRun;
use crate::algebra::{preset, PerturbationRule};
use crate::data::{Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::net::{coordinate_scale_mat, Activation, Dims};
use crate::opt::{ScalingMode, StepConfig};

fn default_widths() -> Vec<usize> {
    vec![128, 512, 2048]
}
fn default_seeds() -> usize {
    4
}
fn default_steps() -> usize {
    100
}
fn default_preset() -> String {
    "mup-global".into()
}
fn default_depth() -> usize {
    3
}
fn default_eta() -> f64 {
    0.05
}
fn default_rho() -> f64 {
    0.3
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_dataset() -> SyntheticSpec {
    SyntheticSpec {
        classes: 2,
        d_in: 16,
        n_per_class: 128,
        separation: 3.0,
        seed: 0,
    }
}

/// Twin runs from one initialization and one data order, differing only in the ascent rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_dataset")]
    pub dataset: SyntheticSpec,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// Output distances on held-out inputs after training, one entry per width.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingReport {
    pub widths: Vec<usize>,
    /// Seed-mean RMS of `f_SAM - f_last_layer_only`.
    pub sam_vs_last_layer: Vec<f64>,
    /// Seed-mean RMS of `f_SAM - f_SGD`.
    pub sam_vs_sgd: Vec<f64>,
    /// `(width, seed, sam_vs_last_layer, sam_vs_sgd)`.
    pub cells: Vec<(usize, u64, f64, f64)>,
    pub diverged: bool,
}

impl CouplingReport {
    /// `D(n)` strictly decreasing in width.
    pub fn collapses(&self) -> bool {
        self.sam_vs_last_layer.windows(2).all(|w| w[1] < w[0])
    }

    /// SAM stays at least as far from SGD as from last-layer SAM at the largest width.
    pub fn sgd_gap_persists(&self) -> bool {
        match (self.sam_vs_sgd.last(), self.sam_vs_last_layer.last()) {
            (Some(s), Some(d)) => s >= d,
            _ => false,
        }
    }
}

fn coupling_cell(cfg: &CouplingConfig, width: usize, seed: u64) -> Result<(f64, f64, bool)> {
    let p = preset(&cfg.preset, cfg.depth)?;
    let train = cfg.dataset.generate(Split::Train)?;
    let test = cfg.dataset.generate(Split::Test)?;
    let dims = Dims::new(train.d_in(), width, cfg.depth, train.classes)?;
    let rules = [PerturbationRule::SamJointLp, PerturbationRule::LastLayerOnly, PerturbationRule::None];
    let mut outs = Vec::with_capacity(rules.len());
    let mut diverged = false;
    for rule in rules {
        let (net, scales) = build_run(Some(&p), &rule, ScalingMode::Bcd, dims, cfg.activation, false, seed)?;
        let mut run = TrainRun::new(net, scales, StepConfig::new(cfg.eta, cfg.rho, rule), seed);
        for _ in 0..cfg.steps {
            run.step(&train)?;
        }
        diverged |= run.diverged;
        outs.push(run.outputs(&test.inputs)?);
    }
    let d_ll = coordinate_scale_mat((&outs[0] - &outs[1]).view());
    let d_sgd = coordinate_scale_mat((&outs[0] - &outs[2]).view());
    Ok((d_ll, d_sgd, diverged))
}

/// Distance between global SAM and last-layer-only SAM, and between global SAM and SGD, as width
/// grows.
pub fn coupling_experiment(cfg: &CouplingConfig, jobs: usize) -> Result<CouplingReport> {
    if cfg.widths.len() < 2 || cfg.seeds == 0 {
        return Err(Error::Config("coupling needs at least 2 widths and 1 seed".into()));
    }
    let cells: Vec<(usize, u64)> = cfg
        .widths
        .iter()
        .flat_map(|&w| (0..cfg.seeds as u64).map(move |s| (w, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<(f64, f64, bool)>> =
        pool.install(|| cells.par_iter().map(|&(w, s)| coupling_cell(cfg, w, s)).collect());
    let mut report = CouplingReport {
        widths: cfg.widths.clone(),
        sam_vs_last_layer: vec![0.0; cfg.widths.len()],
        sam_vs_sgd: vec![0.0; cfg.widths.len()],
        cells: Vec::new(),
        diverged: false,
    };
    for (&(w, s), r) in cells.iter().zip(results) {
        let (d_ll, d_sgd, div) = r?;
        let i = cfg.widths.iter().position(|&x| x == w).expect("cell width from config");
        report.sam_vs_last_layer[i] += d_ll / cfg.seeds as f64;
        report.sam_vs_sgd[i] += d_sgd / cfg.seeds as f64;
        report.cells.push((w, s, d_ll, d_sgd));
        report.diverged |= div;
    }
    Ok(report)
}
