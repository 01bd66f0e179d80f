use std::borrow::Cow;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::scales::LayerScales;
use crate::algebra::PerturbationRule;
use crate::error::{Error, Result};
use crate::net::{frobenius, spectral_norm, GradientSet, Network};

/// Norm applied to each layer's gradient inside perturbation denominators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorNorm {
    #[default]
    Frobenius,
    Spectral,
}

#[derive(Clone, Debug)]
pub struct PerturbStep {
    pub epsilon: Vec<Array2<f64>>,
    /// Joint denominator; for rules without one, the norm of the scaled gradient.
    pub v_norm: f64,
    /// Each layer's term inside the joint norm.
    pub per_layer_contrib: Vec<f64>,
    /// Norm of the loss derivative over the batch.
    pub chi: f64,
    /// Zero gradient with positive radius; the perturbation was set to zero.
    pub degenerate: bool,
}

fn norm_of(m: &Array2<f64>, kind: DenominatorNorm) -> f64 {
    match kind {
        DenominatorNorm::Frobenius => frobenius(m.view()),
        DenominatorNorm::Spectral => spectral_norm(m.view()),
    }
}

/// Weight perturbation of `rule` at the current weights.
///
/// Joint rules set `eps^l = rho·g·a_l·D_l / sqrt(Σ_k |b_k·D_k|²)` over the perturbed layers, where
/// `D_l` is the rule's direction, `a_l` the numerator factor, `b_l` the denominator factor and
/// `g` the global factor.
pub fn compute_perturbation(
    rule: &PerturbationRule,
    net: &Network,
    grads: &GradientSet,
    rho: f64,
    scales: &LayerScales,
    denominator: DenominatorNorm,
) -> Result<PerturbStep> {
    let mut epsilon = Vec::new();
    let s = compute_perturbation_into(rule, net, grads, rho, scales, denominator, &mut epsilon)?;
    Ok(PerturbStep { epsilon, ..s })
}

/// [`compute_perturbation`] writing the perturbation into `eps`, reusing its buffers when shapes
/// agree. The returned step has an empty `epsilon`.
pub fn compute_perturbation_into(
    rule: &PerturbationRule,
    net: &Network,
    grads: &GradientSet,
    rho: f64,
    scales: &LayerScales,
    denominator: DenominatorNorm,
    eps: &mut Vec<Array2<f64>>,
) -> Result<PerturbStep> {
    let o = net.dims().num_layers();
    if grads.grads.len() != o || scales.num_layers() != o {
        return Err(Error::Shape(format!("expected {o} layers of gradients and scales")));
    }
    if rho < 0.0 || !rho.is_finite() {
        return Err(Error::Config(format!("rho must be finite and non-negative, got {rho}")));
    }
    let depth = net.dims().depth;
    let perturbed: Vec<bool> = (1..=o).map(|l| rule.perturbs(l, depth)).collect();
    let chi = frobenius(grads.chi.view());
    if eps.len() != o || eps.iter().zip(&grads.grads).any(|(e, g)| e.dim() != g.dim()) {
        *eps = grads.grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
    }

    // Direction D_l and the matrix whose norm enters the denominator; borrowed for plain rules.
    let mut dirs: Vec<Cow<Array2<f64>>> = Vec::with_capacity(o);
    let mut den_mats: Vec<Cow<Array2<f64>>> = Vec::with_capacity(o);
    for l in 0..o {
        let g = &grads.grads[l];
        let w = net.weight(l + 1);
        match rule {
            PerturbationRule::AsamElementwise if perturbed[l] => {
                let mut t = g.clone();
                ndarray::Zip::from(&mut t).and(w).for_each(|x, &wi| *x *= wi.abs());
                let mut d = t.clone();
                ndarray::Zip::from(&mut d).and(w).for_each(|x, &wi| *x *= wi.abs());
                dirs.push(Cow::Owned(d));
                den_mats.push(Cow::Owned(t));
            }
            PerturbationRule::AsamLayerwise if perturbed[l] => {
                let f = frobenius(w.view());
                dirs.push(Cow::Owned(g * (f * f)));
                den_mats.push(Cow::Owned(g * f));
            }
            _ => {
                dirs.push(Cow::Borrowed(g));
                den_mats.push(Cow::Borrowed(g));
            }
        }
    }

    let contrib: Vec<f64> = (0..o)
        .map(|l| {
            if perturbed[l] {
                scales.den[l] * norm_of(&den_mats[l], denominator)
            } else {
                0.0
            }
        })
        .collect();
    let joint = contrib.iter().map(|c| c * c).sum::<f64>().sqrt();
    // Per-layer factor multiplying D_l; `None` leaves the layer unperturbed.
    let mut factor: Vec<Option<f64>> = vec![None; o];
    let mut degenerate = false;
    if rho > 0.0 && !matches!(rule, PerturbationRule::None) {
        let r = rho * scales.global;
        match rule {
            PerturbationRule::SamUnnormalized => {
                for l in (0..o).filter(|&l| perturbed[l]) {
                    factor[l] = Some(r * scales.num[l]);
                }
            }
            PerturbationRule::SamLayerwiseNorm => {
                for l in (0..o).filter(|&l| perturbed[l]) {
                    let nrm = norm_of(&dirs[l], denominator);
                    if nrm > 0.0 {
                        factor[l] = Some(r * scales.num[l] / nrm);
                    } else {
                        degenerate = true;
                    }
                }
            }
            _ => {
                if joint > 0.0 {
                    for l in (0..o).filter(|&l| perturbed[l]) {
                        factor[l] = Some(r * scales.num[l] / joint);
                    }
                } else {
                    degenerate = true;
                }
            }
        }
    }
    for ((e, d), k) in eps.iter_mut().zip(&dirs).zip(&factor) {
        match k {
            Some(k) => ndarray::Zip::from(e).and(d.as_ref()).for_each(|e, &d| *e = d * k),
            None => e.fill(0.0),
        }
    }
    Ok(PerturbStep {
        epsilon: Vec::new(),
        v_norm: joint,
        per_layer_contrib: contrib,
        chi,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{preset, Parameterization, Q};
    use crate::net::{Activation, Dims, InitSpec, Loss};
    use ndarray::array;
    use num_traits::Zero;

    fn setup(rule: &PerturbationRule, p: &Parameterization, width: usize) -> (Network, GradientSet, LayerScales) {
        let d = Dims::new(3, width, p.depth, 2).unwrap();
        let net = Network::init(d, Activation::Tanh, &InitSpec::bcd(p, &d).unwrap(), 5).unwrap();
        let x = array![[0.5, -1.0, 2.0]];
        let (f, cache) = net.forward(x.view()).unwrap();
        let le = Loss::Mse.evaluate(f.view(), array![[1.0, -1.0]].view(), 1.0).unwrap();
        let g = net.backward(&cache, le.grad.view()).unwrap();
        let s = LayerScales::bcd(p, rule, &d).unwrap();
        (net, g, s)
    }

    fn flat(v: &[Array2<f64>]) -> Vec<f64> {
        v.iter().flat_map(|m| m.iter().copied()).collect()
    }

    #[test]
    fn zero_radius_gives_zero_perturbation() {
        let p = preset("mupp", 2).unwrap();
        for tag in crate::algebra::RULE_TAGS {
            let rule: PerturbationRule = tag.parse().unwrap();
            let (net, g, s) = setup(&rule, &p, 16);
            let e = compute_perturbation(&rule, &net, &g, 0.0, &s, DenominatorNorm::Frobenius).unwrap();
            assert!(flat(&e.epsilon).iter().all(|v| *v == 0.0), "{tag}");
        }
    }

    #[test]
    fn joint_normalization_identity() {
        let p = preset("mupp", 3).unwrap();
        let rule = PerturbationRule::SamJointLp;
        let (net, g, s) = setup(&rule, &p, 32);
        let e = compute_perturbation(&rule, &net, &g, 0.3, &s, DenominatorNorm::Frobenius).unwrap();
        let sum: f64 = (0..4).map(|l| (s.num[l] * g.norms[l]).powi(2)).sum();
        assert!((sum.sqrt() - e.v_norm).abs() <= 1e-10 * e.v_norm);
        // |eps| = rho n^{-d} since numerator and denominator factors coincide.
        let en: f64 = flat(&e.epsilon).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((en - 0.3 * s.global).abs() <= 1e-10 * en);
    }

    #[test]
    fn global_scaling_follows_the_raw_gradient() {
        let p = preset("mup-global", 2).unwrap();
        let rule = PerturbationRule::SamJointLp;
        let (net, g, s) = setup(&rule, &p, 32);
        let e = compute_perturbation(&rule, &net, &g, 0.1, &s, DenominatorNorm::Frobenius).unwrap();
        let a = flat(&e.epsilon);
        let b = flat(&g.grads);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(dot / (na * nb) >= 1.0 - 1e-10);
    }

    #[test]
    fn loss_scale_cancels() {
        let p = preset("mupp", 2).unwrap();
        let rule = PerturbationRule::SamJointLp;
        let (net, g, s) = setup(&rule, &p, 16);
        let mut g2 = g.clone();
        for m in &mut g2.grads {
            *m *= 2.0;
        }
        let e1 = compute_perturbation(&rule, &net, &g, 0.2, &s, DenominatorNorm::Frobenius).unwrap();
        let e2 = compute_perturbation(&rule, &net, &g2, 0.2, &s, DenominatorNorm::Frobenius).unwrap();
        for (x, y) in flat(&e1.epsilon).iter().zip(flat(&e2.epsilon)) {
            assert!((x - y).abs() <= 1e-10 * (x.abs() + 1e-300));
        }
    }

    #[test]
    fn restricted_rules_leave_other_layers_untouched() {
        let p = Parameterization::new(
            crate::algebra::mup_b(3),
            crate::algebra::mup_c(3),
            Q::zero(),
            vec![Q::zero(); 4],
        )
        .unwrap();
        for (rule, kept) in [
            (PerturbationRule::SamOn, vec![0]),
            (PerturbationRule::FirstLayerOnly, vec![0]),
            (PerturbationRule::LastLayerOnly, vec![3]),
        ] {
            let (net, g, s) = setup(&rule, &p, 16);
            let e = compute_perturbation(&rule, &net, &g, 0.5, &s, DenominatorNorm::Frobenius).unwrap();
            for l in 0..4 {
                let zero = e.epsilon[l].iter().all(|v| *v == 0.0);
                assert_eq!(zero, !kept.contains(&l), "{rule} layer {}", l + 1);
            }
        }
    }

    #[test]
    fn zero_gradient_is_degenerate() {
        let p = preset("mupp", 1).unwrap();
        let rule = PerturbationRule::SamJointLp;
        let (net, g, s) = setup(&rule, &p, 8);
        let mut z = g.clone();
        for m in &mut z.grads {
            m.fill(0.0);
        }
        let e = compute_perturbation(&rule, &net, &z, 0.5, &s, DenominatorNorm::Frobenius).unwrap();
        assert!(e.degenerate);
        assert!(flat(&e.epsilon).iter().all(|v| *v == 0.0));
    }
}
