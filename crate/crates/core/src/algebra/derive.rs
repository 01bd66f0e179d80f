use std::collections::BTreeSet;

use num_traits::{One, Zero};
use serde::Serialize;

use super::param::{half, q, qi, qserde, LayerRole, Parameterization, Q};
use super::rule::PerturbationRule;
use crate::error::Error;

fn sgd_stability_violations(b: &[Q], c: &[Q]) -> Vec<String> {
    let o = b.len();
    let depth = o - 1;
    let mut v = Vec::new();
    if !b[0].is_zero() {
        v.push("b_1 = 0".to_string());
    }
    for l in 2..=depth {
        if b[l - 1] != half() {
            v.push(format!("b_{l} = 1/2"));
        }
    }
    if b[o - 1] < half() {
        v.push("b_{L+1} ≥ 1/2".to_string());
    }
    let m = (1..=depth)
        .map(|l| c[l - 1] - if l == 1 { Q::zero() } else { Q::one() })
        .min()
        .expect("depth ≥ 1");
    let r = b[o - 1].min(c[o - 1]) + m;
    if r < Q::zero() {
        v.push("r ≥ 0".to_string());
    }
    if c[o - 1] < Q::one() {
        v.push("c_{L+1} ≥ 1".to_string());
    }
    if b[o - 1] + r < Q::one() {
        v.push("b_{L+1}+r ≥ 1".to_string());
    }
    v
}

/// The unique perturbation scaling making every layer effective under stable `(b, c)`.
///
/// `Ok(None)` when `b_{L+1} < 1`, where no such scaling exists.
pub fn derive_mpp(b: &[Q], c: &[Q]) -> Result<Option<(Q, Vec<Q>)>, Error> {
    if b.len() != c.len() || b.len() < 2 {
        return Err(Error::Shape("b and c need equal length ≥ 2".into()));
    }
    let bad = sgd_stability_violations(b, c);
    if !bad.is_empty() {
        return Err(Error::Infeasible(format!(
            "(b, c) is not stable under SGD; violated: {}",
            bad.join(", ")
        )));
    }
    let o = b.len();
    if b[o - 1] < Q::one() {
        return Ok(None);
    }
    let c_nabla = b[o - 1].min(c[o - 1]);
    let mut d = vec![q(3, 2) - c_nabla; o];
    d[0] = half() - c_nabla;
    d[o - 1] = q(3, 2);
    Ok(Some((q(-1, 2), d)))
}

/// Every perturbation vanishes: uniform `d_l` at the tightest norm bound and `d = 2`.
///
/// Any `d > 1/2` vanishes once `c_nabla ≥ 1/2`; `d = 2` also keeps `c_nabla + r~ > 1` for `c_nabla ≥ 0`.
pub fn vanishing_scaling(depth: usize, c_nabla: Q) -> (Q, Vec<Q>) {
    let lower = (half() - c_nabla).max(Q::one() - c_nabla).max(half());
    let lower = if depth == 1 {
        (half() - c_nabla).max(half())
    } else {
        lower
    };
    (qi(2), vec![lower; depth + 1])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Selection {
    #[serde(with = "qserde")]
    pub d_global: Q,
    #[serde(with = "qserde::seq")]
    pub d_layers: Vec<Q>,
    /// Empty target set: the scaling reduces SAM to SGD.
    pub reduces_to_sgd: bool,
}

/// `d_l` at which layer `l` is effectively perturbed given `d`.
fn effective_value(role: LayerRole, c_nabla: Q, d: Q) -> Q {
    match role {
        LayerRole::InputLike => -c_nabla - d,
        LayerRole::HiddenLike => Q::one() - c_nabla - d,
        LayerRole::OutputLike => Q::one() - d,
    }
}

/// Perturbation scaling that effectively perturbs exactly `targets` (1-based layer indices).
///
/// Non-targets are placed one unit beyond their effective value, so their own perturbation
/// vanishes at rate `n^{-1}`.
pub fn select_perturbation_scaling(
    depth: usize,
    targets: &BTreeSet<usize>,
    c_nabla: Q,
) -> Result<Selection, Error> {
    if depth < 1 {
        return Err(Error::Shape("at least one hidden layer is required".into()));
    }
    if c_nabla < half() {
        return Err(Error::Infeasible(format!(
            "c_nabla = {c_nabla} < 1/2 is unstable (b_{{L+1}} ≥ 1/2 and c_{{L+1}} ≥ 1)"
        )));
    }
    let o = depth + 1;
    if let Some(&bad) = targets.iter().find(|&&l| l == 0 || l > o) {
        return Err(Error::LayerIndex { index: bad, max: o });
    }
    let roles: BTreeSet<LayerRole> = targets.iter().map(|&l| LayerRole::of(l, depth)).collect();
    let d = if roles.contains(&LayerRole::InputLike) {
        q(-1, 2)
    } else if roles.contains(&LayerRole::HiddenLike) {
        Q::zero()
    } else if roles.contains(&LayerRole::OutputLike) {
        half()
    } else {
        let (d, d_layers) = vanishing_scaling(depth, c_nabla);
        return Ok(Selection {
            d_global: d,
            d_layers,
            reduces_to_sgd: true,
        });
    };
    let d_layers = (1..=o)
        .map(|l| {
            let v = effective_value(LayerRole::of(l, depth), c_nabla, d);
            if targets.contains(&l) {
                v
            } else {
                v + Q::one()
            }
        })
        .collect();
    Ok(Selection {
        d_global: d,
        d_layers,
        reduces_to_sgd: false,
    })
}

/// Multipliers under which naive perturbation and learning-rate scaling is muP with effective
/// perturbations in every layer.
pub fn a_mupp(depth: usize) -> Vec<Q> {
    let mut a = vec![Q::zero(); depth + 1];
    a[0] = q(-1, 2);
    a[depth] = half();
    a
}

/// Output multiplier `n^{-1}` only.
pub fn mup_package_multipliers(depth: usize) -> Vec<Q> {
    let mut a = vec![Q::zero(); depth + 1];
    a[depth] = qi(1);
    a
}

/// Multipliers that make a global perturbation scaling `d` effective in every layer.
pub fn global_multipliers(depth: usize, d: Q) -> Vec<Q> {
    let mut a = vec![-d; depth + 1];
    a[0] = -d - half();
    a[depth] = -d + half();
    a
}

/// All-layer effective perturbation scaling for muP realised with multipliers `a`.
pub fn mupp_for_multipliers(a: &[Q]) -> (Q, Vec<Q>) {
    let o = a.len();
    let d = (1..=o)
        .map(|l| {
            let mut v = -a[l - 1];
            if l == 1 {
                v -= half();
            }
            if l == o {
                v += half();
            }
            v
        })
        .min()
        .expect("non-empty");
    let dl = (1..=o)
        .map(|l| {
            let base = -d - a[l - 1] - a[l - 1];
            if l == 1 {
                base - Q::one()
            } else if l == o {
                base + Q::one()
            } else {
                base
            }
        })
        .collect();
    (d, dl)
}

/// Joint equivalence `(a+θ, b−θ, c−2θ, d_l−θ+C, d−θ)`: identical trajectories for every rule
/// with joint normalization.
pub fn equivalence_transform(p: &Parameterization, theta: Q, shift: Q) -> Parameterization {
    let mut out = p.clone();
    for l in 0..p.num_layers() {
        out.a[l] += theta;
        out.b[l] -= theta;
        out.c[l] -= theta + theta;
        out.d_layers[l] += shift - theta;
    }
    out.d_global -= theta;
    out
}

/// Per-layer equivalence `(a+θ_l, b−θ_l, c−2θ_l, d_l−θ_l)` for layerwise-normalized perturbations.
pub fn layerwise_equivalence_transform(
    p: &Parameterization,
    theta: &[Q],
) -> Result<Parameterization, Error> {
    if theta.len() != p.num_layers() {
        return Err(Error::Shape("theta needs L+1 entries".into()));
    }
    let mut out = p.clone();
    for (l, t) in theta.iter().enumerate() {
        out.a[l] += t;
        out.b[l] -= t;
        out.c[l] -= t + t;
        out.d_layers[l] -= t;
    }
    Ok(out)
}

/// Per-layer equivalence for decoupled perturbations:
/// `(a+θ_l, b−θ_l, c−2θ_l, d_l−2θ_l, dtilde_l−θ_l)`.
pub fn decoupled_equivalence_transform(
    p: &Parameterization,
    denominators: &[Q],
    theta: &[Q],
) -> Result<(Parameterization, Vec<Q>), Error> {
    if theta.len() != p.num_layers() || denominators.len() != p.num_layers() {
        return Err(Error::Shape("theta and denominators need L+1 entries".into()));
    }
    let mut out = p.clone();
    let mut den = denominators.to_vec();
    for (l, t) in theta.iter().enumerate() {
        out.a[l] += t;
        out.b[l] -= t;
        out.c[l] -= t + t;
        out.d_layers[l] -= t + t;
        den[l] -= t;
    }
    Ok((out, den))
}

/// Removes multipliers exactly: the joint rule under `a` equals the decoupled rule without
/// multipliers, numerator `d_l + 2a_l` and denominator `d_l + a_l`.
pub fn fold_multipliers(p: &Parameterization) -> (Parameterization, PerturbationRule) {
    let theta: Vec<Q> = p.a.iter().map(|a| -a).collect();
    let (folded, den) = decoupled_equivalence_transform(p, &p.d_layers, &theta)
        .expect("lengths come from p");
    (
        folded,
        PerturbationRule::SamDecoupled {
            denominators: Some(den),
        },
    )
}

/// Fan-ratio scalings that make spectral norms width-consistent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralScaling {
    pub init_std: f64,
    pub lr_factor: f64,
    /// Layerwise-normalized radius factor.
    pub ln_perturb_factor: f64,
    /// Decoupled numerator factor.
    pub dp_perturb_factor: f64,
    /// Decoupled gradient-norm (denominator) factor.
    pub gradnorm_factor: f64,
}

pub fn spectral_scaling(fan_in: usize, fan_out: usize) -> Result<SpectralScaling, Error> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Shape("fan dimensions must be positive".into()));
    }
    let ratio = fan_out as f64 / fan_in as f64;
    Ok(SpectralScaling {
        init_std: (1.0 / (fan_in as f64).sqrt()) * ratio.sqrt().min(1.0),
        lr_factor: ratio,
        ln_perturb_factor: ratio.sqrt(),
        dp_perturb_factor: ratio,
        gradnorm_factor: ratio.sqrt(),
    })
}
