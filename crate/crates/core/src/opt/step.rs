use ndarray::{Array1, Array2, ArrayView2};
use serde::Serialize;

use super::perturb::{compute_perturbation_into, DenominatorNorm, PerturbStep};
use super::scales::LayerScales;
use crate::algebra::PerturbationRule;
use crate::error::Result;
use crate::net::{coordinate_scale_mat, frobenius, spectral_norm_warm, GradientSet, Loss, Network};

/// Magnitude beyond which a run counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView2<'a, f64>,
}

#[derive(Clone, Debug)]
pub struct StepConfig {
    pub eta: f64,
    pub rho: f64,
    pub rule: PerturbationRule,
    pub loss: Loss,
    pub loss_scale: f64,
    pub denominator: DenominatorNorm,
    /// Compute spectral norms (power iteration) this step.
    pub spectral: bool,
}

impl StepConfig {
    pub fn new(eta: f64, rho: f64, rule: PerturbationRule) -> StepConfig {
        StepConfig {
            eta,
            rho,
            rule,
            loss: Loss::Mse,
            loss_scale: 1.0,
            denominator: DenominatorNorm::Frobenius,
            spectral: false,
        }
    }
}

/// Per-step measurements, taken after the ascent and before the descent.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StepTelemetry {
    pub loss: f64,
    pub eps_fro: Vec<f64>,
    /// Spectral norms; present only on spectral steps.
    pub eps_spec: Vec<Option<f64>>,
    pub w_spec: Vec<Option<f64>>,
    pub update_spec: Vec<Option<f64>>,
    /// Coordinate scale of `x~^l - x^l`, hidden layers.
    pub act_perturb: Vec<f64>,
    /// RMS of `f~ - f`.
    pub output_perturb: f64,
    /// RMS of `f`.
    pub output: f64,
    pub v_norm: f64,
    pub contrib: Vec<f64>,
    pub chi: f64,
    /// `(|v| - max_l c_l) / |v|`.
    pub gap_rel: f64,
    /// `sqrt(|v|² - max_l c_l²) / |v|`.
    pub resid_rel: f64,
    /// `||v| - n^{-d_{L+1}} |χ| |x^L|| / |v|`; the last-layer form of `gap_rel`.
    pub last_layer_gap_rel: f64,
    pub degenerate: bool,
    pub diverged: bool,
}

fn finite_and_bounded(m: &Array2<f64>) -> bool {
    m.iter().all(|v| v.is_finite() && v.abs() < DIVERGENCE_LIMIT)
}

/// Buffers reused across SAM steps: the perturbed network and power-iteration start vectors.
#[derive(Clone, Debug, Default)]
pub struct SamScratch {
    perturbed: Option<Network>,
    grads: GradientSet,
    perturbed_grads: GradientSet,
    epsilon: Vec<Array2<f64>>,
    eps_starts: Vec<Option<Array1<f64>>>,
    w_starts: Vec<Option<Array1<f64>>>,
    update_starts: Vec<Option<Array1<f64>>>,
}

fn spectral_all<'a>(
    on: bool,
    mats: impl Iterator<Item = &'a Array2<f64>>,
    starts: &mut Vec<Option<Array1<f64>>>,
) -> Vec<Option<f64>> {
    mats.enumerate()
        .map(|(i, m)| {
            if starts.len() <= i {
                starts.push(None);
            }
            on.then(|| spectral_norm_warm(m.view(), &mut starts[i]))
        })
        .collect()
}

/// One gradient step `W^l -= eta·lr_l·∇_l`. Returns the pre-step loss, or `None` on divergence
/// (weights untouched).
pub fn sgd_step(net: &mut Network, batch: Batch, cfg: &StepConfig, scales: &LayerScales) -> Result<Option<f64>> {
    let (f, cache) = net.forward(batch.x)?;
    let le = cfg.loss.evaluate(f.view(), batch.y, cfg.loss_scale)?;
    if !le.value.is_finite() || !finite_and_bounded(&f) {
        return Ok(None);
    }
    let g = net.backward(&cache, le.grad.view())?;
    if !g.grads.iter().all(finite_and_bounded) {
        return Ok(None);
    }
    let steps: Vec<f64> = scales.lr.iter().map(|lr| -cfg.eta * lr).collect();
    net.add_scaled(&g.grads, &steps);
    Ok(Some(le.value))
}

/// Ascent to `W + eps` on `ascent`, descent of the original weights with the gradient at
/// `W + eps` on `descent`.
pub fn sam_step(
    net: &mut Network,
    ascent: Batch,
    descent: Batch,
    cfg: &StepConfig,
    scales: &LayerScales,
) -> Result<StepTelemetry> {
    sam_step_with(net, ascent, descent, cfg, scales, &mut SamScratch::default())
}

/// [`sam_step`] reusing `scratch` across calls. Spectral norms start from the previous call's
/// singular vectors.
pub fn sam_step_with(
    net: &mut Network,
    ascent: Batch,
    descent: Batch,
    cfg: &StepConfig,
    scales: &LayerScales,
    scratch: &mut SamScratch,
) -> Result<StepTelemetry> {
    let o = net.dims().num_layers();
    let depth = net.dims().depth;
    let mut t = StepTelemetry::default();
    let (f, cache) = net.forward(ascent.x)?;
    let le = cfg.loss.evaluate(f.view(), ascent.y, cfg.loss_scale)?;
    t.loss = le.value;
    t.output = coordinate_scale_mat(f.view());
    if !le.value.is_finite() || !finite_and_bounded(&f) {
        t.diverged = true;
        return Ok(t);
    }
    net.backward_into(&cache, le.grad.view(), &mut scratch.grads)?;
    let PerturbStep {
        v_norm,
        per_layer_contrib,
        chi,
        degenerate,
        ..
    } = compute_perturbation_into(&cfg.rule, net, &scratch.grads, cfg.rho, scales, cfg.denominator, &mut scratch.epsilon)?;
    let epsilon = &scratch.epsilon;
    t.v_norm = v_norm;
    t.chi = chi;
    t.degenerate = degenerate;
    t.eps_fro = epsilon.iter().map(|e| frobenius(e.view())).collect();
    t.eps_spec = spectral_all(cfg.spectral, epsilon.iter(), &mut scratch.eps_starts);
    t.w_spec = spectral_all(cfg.spectral, net.weights().iter(), &mut scratch.w_starts);
    if v_norm > 0.0 {
        let top = per_layer_contrib.iter().copied().fold(0.0, f64::max);
        t.gap_rel = (v_norm - top) / v_norm;
        t.resid_rel = (v_norm * v_norm - top * top).max(0.0).sqrt() / v_norm;
        let last = per_layer_contrib[o - 1];
        t.last_layer_gap_rel = (v_norm - last).abs() / v_norm;
    }
    t.contrib = per_layer_contrib;

    net.perturbed_into(epsilon, &mut scratch.perturbed);
    let pnet = scratch.perturbed.as_ref().expect("filled by perturbed_into");
    let (fp, pcache) = pnet.forward(ascent.x)?;
    t.act_perturb = (1..=depth)
        .map(|l| coordinate_scale_mat((&pcache.post[l] - &cache.post[l]).view()))
        .collect();
    t.output_perturb = coordinate_scale_mat((&fp - &f).view());
    if !finite_and_bounded(&fp) {
        t.diverged = true;
        return Ok(t);
    }

    let same = ascent.x.as_ptr() == descent.x.as_ptr() && ascent.x.dim() == descent.x.dim();
    let (pg_out, pg_cache) = if same {
        (fp, pcache)
    } else {
        pnet.forward(descent.x)?
    };
    let ple = cfg.loss.evaluate(pg_out.view(), descent.y, cfg.loss_scale)?;
    if !ple.value.is_finite() {
        t.diverged = true;
        return Ok(t);
    }
    pnet.backward_into(&pg_cache, ple.grad.view(), &mut scratch.perturbed_grads)?;
    let pg = &scratch.perturbed_grads;
    if !pg.grads.iter().all(finite_and_bounded) {
        t.diverged = true;
        return Ok(t);
    }
    let steps: Vec<f64> = scales.lr.iter().map(|lr| -cfg.eta * lr).collect();
    t.update_spec = spectral_all(cfg.spectral, pg.grads.iter(), &mut scratch.update_starts)
        .into_iter()
        .zip(&steps)
        .map(|(v, s)| v.map(|v| v * s.abs()))
        .collect();
    net.add_scaled(&pg.grads, &steps);
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::preset;
    use crate::net::{Activation, Dims, InitSpec};
    use ndarray::array;

    fn net_and_scales(name: &str, rule: &PerturbationRule) -> (Network, LayerScales) {
        let p = preset(name, 2).unwrap();
        let d = Dims::new(3, 16, 2, 1).unwrap();
        let net = Network::init(d, Activation::Tanh, &InitSpec::bcd(&p, &d).unwrap(), 3).unwrap();
        let s = LayerScales::bcd(&p, rule, &d).unwrap();
        (net, s)
    }

    #[test]
    fn rule_none_matches_sgd() {
        let rule = PerturbationRule::None;
        let (mut a, s) = net_and_scales("mupp", &rule);
        let mut b = a.clone();
        let x = array![[0.2, -0.4, 1.0]];
        let y = array![[0.5]];
        let batch = Batch { x: x.view(), y: y.view() };
        let cfg = StepConfig::new(0.1, 0.7, rule);
        for _ in 0..3 {
            sam_step(&mut a, batch, batch, &cfg, &s).unwrap();
            sgd_step(&mut b, batch, &cfg, &s).unwrap();
        }
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn zero_radius_matches_sgd() {
        let rule = PerturbationRule::SamJointLp;
        let (mut a, s) = net_and_scales("mupp", &rule);
        let mut b = a.clone();
        let x = array![[0.2, -0.4, 1.0]];
        let y = array![[0.5]];
        let batch = Batch { x: x.view(), y: y.view() };
        let cfg = StepConfig::new(0.1, 0.0, rule);
        sam_step(&mut a, batch, batch, &cfg, &s).unwrap();
        sgd_step(&mut b, batch, &cfg, &s).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let rule = PerturbationRule::SamJointLp;
        let (mut a, s) = net_and_scales("mupp", &rule);
        let w0 = a.weights().to_vec();
        let x = array![[0.2, -0.4, 1.0]];
        let y = array![[0.5]];
        let batch = Batch { x: x.view(), y: y.view() };
        sam_step(&mut a, batch, batch, &StepConfig::new(0.0, 0.3, rule), &s).unwrap();
        assert_eq!(a.weights(), &w0[..]);
    }

    #[test]
    fn telemetry_is_populated() {
        let rule = PerturbationRule::SamJointLp;
        let (mut a, s) = net_and_scales("mupp", &rule);
        let x = array![[0.2, -0.4, 1.0]];
        let y = array![[0.5]];
        let batch = Batch { x: x.view(), y: y.view() };
        let mut cfg = StepConfig::new(0.1, 0.3, rule);
        cfg.spectral = true;
        let t = sam_step(&mut a, batch, batch, &cfg, &s).unwrap();
        assert_eq!(t.eps_fro.len(), 3);
        assert_eq!(t.act_perturb.len(), 2);
        assert!(t.w_spec.iter().all(|v| v.is_some()));
        // Batch one: perturbations are rank one.
        for (f, sp) in t.eps_fro.iter().zip(&t.eps_spec) {
            assert!((f - sp.unwrap()).abs() <= 1e-9 * f.max(1e-300));
        }
        assert!(!t.diverged);
    }
}
