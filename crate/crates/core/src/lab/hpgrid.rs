use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::build_run;
use super::train::TrainRun;
use crate::algebra::{preset, PerturbationRule};
use crate::data::{Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::net::{Activation, Dims};
use crate::opt::{ScalingMode, StepConfig, DIVERGENCE_LIMIT};

fn default_widths() -> Vec<usize> {
    vec![128, 512, 2048]
}
fn default_etas() -> Vec<f64> {
    vec![0.1, 0.4, 1.6]
}
fn default_rhos() -> Vec<f64> {
    vec![0.0, 0.4, 1.6]
}
fn default_seeds() -> usize {
    4
}
fn default_steps() -> usize {
    60
}
fn default_batch() -> usize {
    8
}
fn default_preset() -> String {
    "mupp".into()
}
fn default_depth() -> usize {
    2
}
fn default_rule() -> PerturbationRule {
    PerturbationRule::SamJointLp
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_dataset() -> SyntheticSpec {
    SyntheticSpec {
        classes: 4,
        d_in: 16,
        n_per_class: 256,
        separation: 1.5,
        seed: 0,
    }
}

/// Learning-rate by radius grid trained at several widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpGridConfig {
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_etas")]
    pub etas: Vec<f64>,
    #[serde(default = "default_rhos")]
    pub rhos: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_rule")]
    pub rule: PerturbationRule,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_dataset")]
    pub dataset: SyntheticSpec,
}

impl Default for HpGridConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl HpGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.seeds == 0 || self.batch_size == 0 {
            return Err(Error::Config("hp grid needs widths, seeds and a positive batch size".into()));
        }
        if self.etas.is_empty() || self.rhos.is_empty() || self.etas.len() > 8 || self.rhos.len() > 8 {
            return Err(Error::Config("eta and rho grids need between 1 and 8 values".into()));
        }
        if self.etas.iter().chain(&self.rhos).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("grid values must be finite and non-negative".into()));
        }
        preset(&self.preset, self.depth).map(|_| ())
    }
}

/// Final accuracies of one `(width, eta, rho, seed)` run. A run counts as diverged when it blew
/// up numerically or ended with a higher test loss than it started with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpCell {
    pub width: usize,
    pub eta_index: usize,
    pub rho_index: usize,
    pub eta: f64,
    pub rho: f64,
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Test loss before training.
    pub init_loss: f64,
    pub diverged: bool,
}

/// Best grid point of one `(width, seed)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HpOptimum {
    pub width: usize,
    pub seed: u64,
    pub eta_index: usize,
    pub rho_index: usize,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HpGridTable {
    pub preset: String,
    pub cells: Vec<HpCell>,
}

fn hp_cell(cfg: &HpGridConfig, width: usize, ei: usize, ri: usize, seed: u64) -> Result<HpCell> {
    let p = preset(&cfg.preset, cfg.depth)?;
    let train = cfg.dataset.generate(Split::Train)?;
    let test = cfg.dataset.generate(Split::Test)?;
    let dims = Dims::new(train.d_in(), width, cfg.depth, train.classes)?;
    let (eta, rho) = (cfg.etas[ei], cfg.rhos[ri]);
    let (net, scales) = build_run(Some(&p), &cfg.rule, ScalingMode::Bcd, dims, cfg.activation, false, seed)?;
    let mut run = TrainRun::new(net, scales, StepConfig::new(eta, rho, cfg.rule.clone()), seed)
        .with_batches(cfg.batch_size, cfg.batch_size);
    let init_loss = run.evaluate(&test)?.loss;
    for _ in 0..cfg.steps {
        run.step(&train)?;
        if run.diverged {
            break;
        }
    }
    let tr = run.evaluate(&train)?;
    let te = run.evaluate(&test)?;
    // Bounded activations turn a blowup into failed training rather than overflow.
    let diverged = run.diverged || !te.loss.is_finite() || te.loss >= DIVERGENCE_LIMIT || te.loss > init_loss;
    Ok(HpCell {
        width,
        eta_index: ei,
        rho_index: ri,
        eta,
        rho,
        seed,
        train_accuracy: tr.accuracy,
        test_accuracy: te.accuracy,
        test_loss: te.loss,
        init_loss,
        diverged,
    })
}

/// Trains every grid point; cells are ordered by `(width, seed, eta, rho)`.
pub fn hp_grid(cfg: &HpGridConfig, jobs: usize) -> Result<HpGridTable> {
    cfg.validate()?;
    let mut keys = Vec::new();
    for &w in &cfg.widths {
        for s in 0..cfg.seeds as u64 {
            for ei in 0..cfg.etas.len() {
                for ri in 0..cfg.rhos.len() {
                    keys.push((w, s, ei, ri));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let cells: Vec<Result<HpCell>> =
        pool.install(|| keys.par_iter().map(|&(w, s, ei, ri)| hp_cell(cfg, w, ei, ri, s)).collect());
    Ok(HpGridTable {
        preset: cfg.preset.clone(),
        cells: cells.into_iter().collect::<Result<_>>()?,
    })
}

impl HpGridTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for c in &self.cells {
            wr.serialize(c)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Highest test accuracy per `(width, seed)`, ties to the lower test loss then the earlier
    /// grid point. Diverged cells never win.
    pub fn optima(&self) -> Vec<HpOptimum> {
        let mut groups: Vec<(usize, u64)> = self.cells.iter().map(|c| (c.width, c.seed)).collect();
        groups.sort_unstable();
        groups.dedup();
        groups
            .into_iter()
            .filter_map(|(w, s)| {
                self.cells
                    .iter()
                    .filter(|c| c.width == w && c.seed == s && !c.diverged)
                    .min_by(|a, b| {
                        b.test_accuracy
                            .total_cmp(&a.test_accuracy)
                            .then(a.test_loss.total_cmp(&b.test_loss))
                    })
                    .map(|c| HpOptimum {
                        width: w,
                        seed: s,
                        eta_index: c.eta_index,
                        rho_index: c.rho_index,
                        test_accuracy: c.test_accuracy,
                    })
            })
            .collect()
    }

    /// Fraction of seeds whose optimum moves by at most one cell (Chebyshev) between widths
    /// `from` and `to`.
    pub fn stable_optimum_fraction(&self, from: usize, to: usize) -> f64 {
        let opt = self.optima();
        let seeds: Vec<u64> = opt.iter().filter(|o| o.width == from).map(|o| o.seed).collect();
        if seeds.is_empty() {
            return 0.0;
        }
        let close = seeds
            .iter()
            .filter(|&&s| {
                let a = opt.iter().find(|o| o.width == from && o.seed == s);
                let b = opt.iter().find(|o| o.width == to && o.seed == s);
                match (a, b) {
                    (Some(a), Some(b)) => {
                        a.eta_index.abs_diff(b.eta_index) <= 1 && a.rho_index.abs_diff(b.rho_index) <= 1
                    }
                    _ => false,
                }
            })
            .count();
        close as f64 / seeds.len() as f64
    }

    /// `(eta_index, rho_index)` cells stable in every seed at `stable_width` and diverged in some
    /// seed at `wide`.
    pub fn newly_diverged(&self, stable_width: usize, wide: usize) -> Vec<(usize, usize)> {
        let mut pts: Vec<(usize, usize)> = self.cells.iter().map(|c| (c.eta_index, c.rho_index)).collect();
        pts.sort_unstable();
        pts.dedup();
        pts.into_iter()
            .filter(|&(e, r)| {
                let at = |w: usize| self.cells.iter().filter(move |c| c.width == w && c.eta_index == e && c.rho_index == r);
                at(stable_width).all(|c| !c.diverged) && at(wide).any(|c| c.diverged)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HpGridConfig {
        HpGridConfig {
            widths: vec![8, 16],
            etas: vec![0.1, 0.3],
            rhos: vec![0.0, 0.2],
            seeds: 2,
            steps: 4,
            ..HpGridConfig::default()
        }
    }

    #[test]
    fn zero_radius_column_matches_sgd() {
        let cfg = tiny();
        let sam = hp_grid(&cfg, 1).unwrap();
        let sgd = hp_grid(&HpGridConfig { rule: PerturbationRule::None, ..cfg }, 1).unwrap();
        for (a, b) in sam.cells.iter().zip(&sgd.cells) {
            if a.rho == 0.0 {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn optima_cover_every_width_and_seed() {
        let t = hp_grid(&tiny(), 2).unwrap();
        assert_eq!(t.cells.len(), 2 * 2 * 2 * 2);
        assert_eq!(t.optima().len(), 4);
        let f = t.stable_optimum_fraction(8, 16);
        assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn oversized_grid_is_rejected() {
        let cfg = HpGridConfig { etas: vec![0.1; 9], ..tiny() };
        assert!(hp_grid(&cfg, 1).is_err());
    }
}
