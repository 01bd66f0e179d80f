use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_exponent, mean_by_width, ExponentFit};
use crate::algebra::{preset, Parameterization, PerturbationRule, Statistic};
use crate::data::{Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::net::rng::Stream;
use crate::net::{coordinate_scale_mat, Activation, Dims, InitSpec, Loss, Network};
use super::train::TrainRun;
use crate::opt::{DenominatorNorm, LayerScales, ScalingMode, StepConfig, StepTelemetry};

fn default_widths() -> Vec<usize> {
    vec![64, 128, 256, 512, 1024]
}
fn default_seeds() -> usize {
    8
}
fn default_steps() -> usize {
    200
}
fn default_depth() -> usize {
    3
}
fn default_rule() -> PerturbationRule {
    PerturbationRule::SamJointLp
}
fn default_mode() -> ScalingMode {
    ScalingMode::Bcd
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_loss() -> Loss {
    Loss::Mse
}
fn default_eta() -> f64 {
    0.05
}
fn default_rho() -> f64 {
    0.1
}
fn one() -> usize {
    1
}
fn default_spectral_every() -> usize {
    20
}
fn default_probe() -> usize {
    4
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

/// Width sweep of one parameterization and rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub seed_offset: u64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Preset name; ignored when `parameterization` is given.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub parameterization: Option<Parameterization>,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_rule")]
    pub rule: PerturbationRule,
    #[serde(default = "default_mode")]
    pub mode: ScalingMode,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_loss")]
    pub loss: Loss,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Descent batch size.
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default = "one")]
    pub ascent_batch_size: usize,
    #[serde(default = "default_dataset")]
    pub dataset: SyntheticSpec,
    /// Statistic keys to record; empty records everything.
    #[serde(default)]
    pub statistics: Vec<String>,
    #[serde(default = "default_spectral_every")]
    pub spectral_every: usize,
    #[serde(default)]
    pub zero_output: bool,
    #[serde(default)]
    pub denominator: DenominatorNorm,
    /// Number of held-out inputs probed for activation updates.
    #[serde(default = "default_probe")]
    pub probe_inputs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Config("a sweep needs at least 3 widths".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("widths must be positive".into()));
        }
        let mut w = self.widths.clone();
        w.sort_unstable();
        w.dedup();
        if w.len() != self.widths.len() {
            return Err(Error::Config("widths must be distinct".into()));
        }
        let ratios: Vec<f64> = w.windows(2).map(|p| p[1] as f64 / p[0] as f64).collect();
        if ratios.iter().any(|r| (r - ratios[0]).abs() > 1e-9 * ratios[0]) {
            return Err(Error::Config("widths must be geometrically spaced".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if self.batch_size == 0 || self.ascent_batch_size == 0 || self.probe_inputs == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.spectral_every == 0 {
            return Err(Error::Config("spectral_every must be positive".into()));
        }
        if !(self.eta >= 0.0 && self.rho >= 0.0 && self.eta.is_finite() && self.rho.is_finite()) {
            return Err(Error::Config("eta and rho must be finite and non-negative".into()));
        }
        for k in &self.statistics {
            k.parse::<Statistic>()?;
        }
        if self.mode == ScalingMode::Bcd {
            self.parameterization()?;
        }
        Ok(())
    }

    pub fn parameterization(&self) -> Result<Parameterization> {
        match (&self.parameterization, &self.preset) {
            (Some(p), _) => {
                p.validate()?;
                Ok(p.clone())
            }
            (None, Some(name)) => preset(name, self.depth),
            (None, None) => Err(Error::Config("bcd mode needs a preset or a parameterization".into())),
        }
    }

    pub fn label(&self) -> String {
        match (&self.parameterization, &self.preset, self.mode) {
            (_, _, ScalingMode::Spectral) => "spectral".into(),
            (Some(_), _, _) => "custom".into(),
            (None, Some(n), _) => n.clone(),
            (None, None, _) => "none".into(),
        }
    }

    fn wants(&self, key: &str) -> bool {
        self.statistics.is_empty() || self.statistics.iter().any(|k| k == key)
    }

    /// Whether any requested statistic needs power iteration.
    fn wants_spectral(&self) -> bool {
        self.statistics.is_empty()
            || self.statistics.iter().any(|k| {
                ["eps_spec/", "w_spec/", "eps_ratio/", "update_spec/"].iter().any(|p| k.starts_with(p))
            })
    }
}

/// One aggregated measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub run_id: String,
    pub width: usize,
    pub seed: u64,
    pub step_range: String,
    pub statistic: String,
    pub value: f64,
    pub rule: String,
    pub preset: String,
    pub eta: f64,
    pub rho: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub records: Vec<SweepRecord>,
}

/// Builds the network and per-layer factors of a configuration at one width.
pub fn build_run(
    p: Option<&Parameterization>,
    rule: &PerturbationRule,
    mode: ScalingMode,
    dims: Dims,
    activation: Activation,
    zero_output: bool,
    seed: u64,
) -> Result<(Network, LayerScales)> {
    let (spec, scales) = match mode {
        ScalingMode::Bcd => {
            let p = p.ok_or_else(|| Error::Config("bcd mode needs a parameterization".into()))?;
            (InitSpec::bcd(p, &dims)?, LayerScales::bcd(p, rule, &dims)?)
        }
        ScalingMode::Spectral => (InitSpec::spectral(&dims)?, LayerScales::spectral(rule, &dims)?),
    };
    let net = Network::init(dims, activation, &spec.with_zero_output(zero_output), seed)?;
    Ok((net, scales))
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// `k` uniform example indices, with replacement.
pub fn draw_indices(stream: &mut Stream, len: usize, k: usize) -> Vec<usize> {
    (0..k).map(|_| stream.below(len as u64) as usize).collect()
}

struct Series {
    per_step: BTreeMap<String, Vec<f64>>,
    single: BTreeMap<String, (usize, f64)>,
}

impl Series {
    fn push(&mut self, key: String, v: f64) {
        self.per_step.entry(key).or_default().push(v);
    }
}

fn record_telemetry(s: &mut Series, t: &StepTelemetry, step: usize, from: usize, cfg: &SweepConfig) {
    if step == 1 {
        s.single.insert("output_perturb".into(), (1, t.output_perturb));
    }
    if step == 2 {
        s.single.insert("output_perturb_post".into(), (2, t.output_perturb));
    }
    if step < from {
        return;
    }
    let o = t.eps_fro.len();
    for l in 1..=o {
        s.push(format!("eps_fro/{l}"), t.eps_fro[l - 1]);
        s.push(format!("v_contrib/{l}"), t.contrib[l - 1]);
        if let Some(e) = t.eps_spec[l - 1] {
            s.push(format!("eps_spec/{l}"), e);
            if let Some(w) = t.w_spec[l - 1] {
                s.push(format!("w_spec/{l}"), w);
                s.push(format!("eps_ratio/{l}"), e / w);
            }
        }
        if let Some(u) = t.update_spec.get(l - 1).copied().flatten() {
            s.push(format!("update_spec/{l}"), u);
        }
    }
    for (l, a) in t.act_perturb.iter().enumerate() {
        s.push(format!("act_perturb/{}", l + 1), *a);
    }
    s.push("v_norm".into(), t.v_norm);
    if !matches!(cfg.rule, PerturbationRule::None) {
        s.push("gap_rel".into(), t.gap_rel);
        s.push("resid_rel".into(), t.resid_rel);
    }
    s.push("loss".into(), t.loss);
    s.push("chi".into(), t.chi);
    s.push("output".into(), t.output);
}

/// `(key, step_range, value)` rows of one cell.
pub type CellRows = Vec<(String, String, f64)>;

/// Aggregated statistics of one `(width, seed)` cell plus whether it diverged.
pub fn run_cell(cfg: &SweepConfig, width: usize, seed: u64) -> Result<(CellRows, bool)> {
    let p = match cfg.mode {
        ScalingMode::Bcd => Some(cfg.parameterization()?),
        ScalingMode::Spectral => None,
    };
    let train = cfg.dataset.generate(Split::Train)?;
    let test = cfg.dataset.generate(Split::Test)?;
    let dims = Dims::new(train.d_in(), width, cfg.depth, train.classes)?;
    let (net, scales) = build_run(p.as_ref(), &cfg.rule, cfg.mode, dims, cfg.activation, cfg.zero_output, seed)?;

    let probe_n = cfg.probe_inputs.min(test.len());
    let probe_x = test.inputs.slice(s![..probe_n, ..]).to_owned();
    let (_, init_cache) = net.forward(probe_x.view())?;
    let mut out = Vec::new();
    for l in 1..=cfg.depth {
        out.push((format!("init_preact/{l}"), "0".to_string(), coordinate_scale_mat(init_cache.pre[l - 1].view())));
    }

    let mut series = Series { per_step: BTreeMap::new(), single: BTreeMap::new() };
    let from = cfg.steps.min(2);
    let mut step_cfg = StepConfig::new(cfg.eta, cfg.rho, cfg.rule.clone());
    step_cfg.loss = cfg.loss;
    step_cfg.denominator = cfg.denominator;
    let mut run = TrainRun::new(net, scales, step_cfg, seed).with_batches(cfg.batch_size, cfg.ascent_batch_size);
    let track_update = (1..=cfg.depth).any(|l| cfg.wants(&format!("act_update/{l}")));
    for step in 1..=cfg.steps {
        run.cfg.spectral = cfg.wants_spectral()
            && (step == 1 || step % cfg.spectral_every == 0 || step == cfg.steps);
        let Some(t) = run.step(&train)? else { break };
        record_telemetry(&mut series, &t, step, from, cfg);
        if run.diverged {
            break;
        }
        if step >= from && track_update {
            let (_, c) = run.net.forward(probe_x.view())?;
            for l in 1..=cfg.depth {
                let d: Array2<f64> = &c.post[l] - &init_cache.post[l];
                series.push(format!("act_update/{l}"), coordinate_scale_mat(d.view()));
            }
        }
    }
    let diverged = run.diverged;
    let range = format!("{}-{}", from, cfg.steps);
    for (k, mut v) in series.per_step {
        out.push((k, range.clone(), median(&mut v)));
    }
    for (k, (step, v)) in series.single {
        out.push((k, step.to_string(), v));
    }
    out.retain(|(k, _, _)| cfg.wants(k));
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok((out, diverged))
}

/// Runs every `(width, seed)` cell on a pool of `jobs` workers; output order is `(width, seed,
/// statistic)` regardless of scheduling.
pub fn run_width_sweep(cfg: &SweepConfig, jobs: usize) -> Result<SweepTable> {
    cfg.validate()?;
    let cells: Vec<(usize, u64)> = cfg
        .widths
        .iter()
        .flat_map(|&w| (0..cfg.seeds as u64).map(move |s| (w, s + cfg.seed_offset)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<(usize, u64, CellRows, bool)>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(w, s)| run_cell(cfg, w, s).map(|(v, d)| (w, s, v, d)))
            .collect()
    });
    let label = cfg.label();
    let mut records = Vec::new();
    for r in results {
        let (w, s, vals, div) = r?;
        for (stat, range, value) in vals {
            records.push(SweepRecord {
                run_id: format!("{label}-{}-w{w}-s{s}", cfg.rule.tag()),
                width: w,
                seed: s,
                step_range: range,
                statistic: stat,
                value,
                rule: cfg.rule.tag().to_string(),
                preset: label.clone(),
                eta: cfg.eta,
                rho: cfg.rho,
                diverged: div,
            });
        }
    }
    records.sort_by(|a, b| (a.width, a.seed, &a.statistic).cmp(&(b.width, b.seed, &b.statistic)));
    Ok(SweepTable { records })
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn statistics(&self) -> Vec<String> {
        let mut v: Vec<String> = self.records.iter().map(|r| r.statistic.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Non-diverged `(width, value)` rows of one statistic.
    pub fn rows(&self, statistic: &str) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter(|r| r.statistic == statistic && !r.diverged)
            .map(|r| (r.width, r.value))
            .collect()
    }

    pub fn diverged_cells(&self) -> usize {
        let mut cells: Vec<(usize, u64)> =
            self.records.iter().filter(|r| r.diverged).map(|r| (r.width, r.seed)).collect();
        cells.sort_unstable();
        cells.dedup();
        cells.len()
    }

    /// Seed-averaged exponent fit of one statistic.
    pub fn fit(&self, statistic: &str) -> Result<ExponentFit> {
        let pts = mean_by_width(&self.rows(statistic));
        fit_exponent(&pts).map(|f| f.named(statistic))
    }
}
