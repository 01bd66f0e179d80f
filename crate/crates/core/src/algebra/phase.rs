use std::fmt;

use num_traits::{One, Zero};
use serde::Serialize;

use super::param::{fmt_q, half, qserde, Effective, LayerRole, Parameterization, Q};
use crate::error::Error;

fn indicator(l: usize) -> Q {
    if l == 1 {
        Q::zero()
    } else {
        Q::one()
    }
}

/// `min(b_{L+1}, c_{L+1}, d + d_{L+1})` on effective exponents.
fn update_gradient_exp(e: &Effective) -> Q {
    let o = e.out();
    e.b_(o).min(e.c_(o)).min(e.last_exp())
}

fn r_prefix(e: &Effective, up_to: usize) -> Q {
    let m = (1..=up_to)
        .map(|l| e.c_(l) - indicator(l))
        .min()
        .expect("non-empty prefix");
    update_gradient_exp(e) + m
}

fn r_tilde_prefix(e: &Effective, up_to: usize) -> Q {
    let m = (1..=up_to)
        .map(|l| e.d_(l) - indicator(l))
        .min()
        .expect("non-empty prefix");
    e.c_nabla + e.d_global + m
}

fn check_layer(p: &Parameterization, l: usize) -> Result<(), Error> {
    if l == 0 || l > p.depth {
        Err(Error::LayerIndex { index: l, max: p.depth })
    } else {
        Ok(())
    }
}

/// Maximal feature update exponent `r`.
pub fn compute_r(p: &Parameterization) -> Q {
    r_prefix(&p.effective(), p.depth)
}

/// `r_l`, the update exponent of layer `l`'s activations.
pub fn compute_r_layer(p: &Parameterization, l: usize) -> Result<Q, Error> {
    check_layer(p, l)?;
    Ok(r_prefix(&p.effective(), l))
}

/// `r~_{l0}`; `up_to_layer = L` gives `r~`.
pub fn compute_r_tilde(p: &Parameterization, up_to_layer: usize) -> Result<Q, Error> {
    check_layer(p, up_to_layer)?;
    Ok(r_tilde_prefix(&p.effective(), up_to_layer))
}

/// Offset whose vanishing marks an effective perturbation of layer `l`.
///
/// `c_nabla + d + d_l - [l != 1]` below the output, `d + d_{L+1} - 1` at the output.
pub fn effective_offset(e: &Effective, l: usize) -> Q {
    if l == e.out() {
        e.last_exp() - Q::one()
    } else {
        e.c_nabla + e.d_global + e.d_(l) - indicator(l)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationStatus {
    Vanishing,
    NontrivialOnly,
    Effective,
}

impl fmt::Display for PerturbationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerturbationStatus::Vanishing => "vanishing",
            PerturbationStatus::NontrivialOnly => "nontrivial-only",
            PerturbationStatus::Effective => "effective",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StabilityFlags {
    pub init: bool,
    pub feature: bool,
    pub output: bool,
    pub perturbation_feature: bool,
    pub perturbation_output: bool,
}

impl StabilityFlags {
    pub fn all(&self) -> bool {
        self.init && self.feature && self.output && self.perturbation_feature && self.perturbation_output
    }
}

fn ser_qs<S: serde::Serializer>(v: &[Q], s: S) -> Result<S::Ok, S::Error> {
    qserde::seq::serialize(v, s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseReport {
    #[serde(with = "qserde")]
    pub c_nabla: Q,
    #[serde(with = "qserde")]
    pub r: Q,
    #[serde(with = "qserde")]
    pub r_tilde: Q,
    #[serde(serialize_with = "ser_qs")]
    pub r_l: Vec<Q>,
    #[serde(serialize_with = "ser_qs")]
    pub r_tilde_l: Vec<Q>,
    pub stable: bool,
    pub stability: StabilityFlags,
    /// Violated inequalities, named.
    pub violations: Vec<String>,
    pub nontrivial: bool,
    pub feature_learning: Vec<bool>,
    pub perturbation_status: Vec<PerturbationStatus>,
    pub output_perturbation_nontrivial: bool,
    pub norm_constraint_saturated: Vec<bool>,
    /// `C` added to every `d_l` to reach the canonical representative.
    #[serde(with = "qserde")]
    pub canonical_shift: Q,
}

impl PhaseReport {
    pub fn all_effective(&self) -> bool {
        self.perturbation_status
            .iter()
            .all(|s| *s == PerturbationStatus::Effective)
    }

    pub fn last_layer_effective(&self) -> bool {
        *self.perturbation_status.last().expect("output layer") == PerturbationStatus::Effective
    }

    pub fn full_feature_learning(&self) -> bool {
        self.feature_learning.iter().all(|&b| b)
    }

    /// Every layer vanishing and the output perturbation trivial: SAM reduces to SGD.
    pub fn all_vanishing(&self) -> bool {
        self.perturbation_status
            .iter()
            .all(|s| *s == PerturbationStatus::Vanishing)
    }

    pub fn effective_layers(&self) -> Vec<usize> {
        self.perturbation_status
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == PerturbationStatus::Effective)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

pub fn classify(p: &Parameterization) -> PhaseReport {
    let e = p.effective();
    let depth = p.depth;
    let o = e.out();
    let r = r_prefix(&e, depth);
    let r_tilde = r_tilde_prefix(&e, depth);
    let r_l: Vec<Q> = (1..=depth).map(|l| r_prefix(&e, l)).collect();
    let r_tilde_l: Vec<Q> = (1..=depth).map(|l| r_tilde_prefix(&e, l)).collect();
    let b_out = e.b_(o);
    let last = e.last_exp();
    let mut violations = Vec::new();

    let mut init = true;
    if !e.b_(1).is_zero() {
        init = false;
        violations.push("b_1 = 0 violated".to_string());
    }
    for l in 2..=depth {
        if e.b_(l) != half() {
            init = false;
            violations.push(format!("b_{l} = 1/2 violated"));
        }
    }
    if b_out < half() {
        init = false;
        violations.push("b_{L+1} ≥ 1/2 violated".to_string());
    }
    let feature = r >= Q::zero();
    if !feature {
        violations.push("r ≥ 0 violated".to_string());
    }
    let mut output = true;
    if e.c_(o) < Q::one() {
        output = false;
        violations.push("c_{L+1} ≥ 1 violated".to_string());
    }
    if b_out + r < Q::one() {
        output = false;
        violations.push("b_{L+1}+r ≥ 1 violated".to_string());
    }
    let perturbation_feature = r_tilde >= Q::zero();
    if !perturbation_feature {
        violations.push("r̃ ≥ 0 violated".to_string());
    }
    let mut perturbation_output = true;
    if last < Q::one() {
        perturbation_output = false;
        violations.push("d+d_{L+1} ≥ 1 violated".to_string());
    }
    if b_out + r_tilde < Q::one() {
        perturbation_output = false;
        violations.push("b_{L+1}+r̃ ≥ 1 violated".to_string());
    }
    let stability = StabilityFlags {
        init,
        feature,
        output,
        perturbation_feature,
        perturbation_output,
    };

    let nontrivial = e.c_(o) == Q::one() || e.c_nabla + r == Q::one();
    let feature_learning = r_l.iter().map(|x| x.is_zero()).collect();
    let output_perturbation_nontrivial = last == Q::one() || e.c_nabla + r_tilde == Q::one();

    let mut perturbation_status: Vec<PerturbationStatus> = (1..=depth)
        .map(|l| {
            if effective_offset(&e, l).is_zero() {
                PerturbationStatus::Effective
            } else if r_tilde_l[l - 1] > Q::zero() {
                PerturbationStatus::Vanishing
            } else {
                PerturbationStatus::NontrivialOnly
            }
        })
        .collect();
    perturbation_status.push(if last == Q::one() {
        PerturbationStatus::Effective
    } else if output_perturbation_nontrivial {
        PerturbationStatus::NontrivialOnly
    } else {
        PerturbationStatus::Vanishing
    });

    let canon = p.canonicalize();
    let norm_constraint_saturated = (1..=o).map(|l| canon.norm_slack(l).is_zero()).collect();

    PhaseReport {
        c_nabla: e.c_nabla,
        r,
        r_tilde,
        r_l,
        r_tilde_l,
        stable: stability.all(),
        stability,
        violations,
        nontrivial,
        feature_learning,
        perturbation_status,
        output_perturbation_nontrivial,
        norm_constraint_saturated,
        canonical_shift: p.canonical_shift(),
    }
}

impl fmt::Display for PhaseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |b: bool| if b { "pass" } else { "FAIL" };
        writeln!(f, "c_nabla = {}   r = {}   r~ = {}", fmt_q(&self.c_nabla), fmt_q(&self.r), fmt_q(&self.r_tilde))?;
        writeln!(f, "stable                      {}", mark(self.stable))?;
        writeln!(f, "  init (b_1=0, b_l=1/2, b_{{L+1}}≥1/2)   {}", mark(self.stability.init))?;
        writeln!(f, "  features (r≥0)                      {}", mark(self.stability.feature))?;
        writeln!(f, "  output (c_{{L+1}}≥1, b_{{L+1}}+r≥1)     {}", mark(self.stability.output))?;
        writeln!(f, "  perturbed features (r̃≥0)           {}", mark(self.stability.perturbation_feature))?;
        writeln!(f, "  perturbed output (d+d_{{L+1}}≥1, b_{{L+1}}+r̃≥1) {}", mark(self.stability.perturbation_output))?;
        for v in &self.violations {
            writeln!(f, "    {v}")?;
        }
        writeln!(f, "nontrivial                  {}", mark(self.nontrivial))?;
        writeln!(f, "output perturbation nontrivial {}", mark(self.output_perturbation_nontrivial))?;
        writeln!(f, "layer  role         r_l    r~_l   feature  perturbation     norm-tight")?;
        let n = self.perturbation_status.len();
        for l in 1..=n {
            let role = LayerRole::of(l, n - 1);
            let (rl, rtl, fl) = if l < n {
                (
                    fmt_q(&self.r_l[l - 1]),
                    fmt_q(&self.r_tilde_l[l - 1]),
                    if self.feature_learning[l - 1] { "yes" } else { "no" },
                )
            } else {
                ("-".into(), "-".into(), "-")
            };
            writeln!(
                f,
                "{l:<6} {role:<12} {rl:<6} {rtl:<6} {fl:<8} {:<16} {}",
                self.perturbation_status[l - 1].to_string(),
                self.norm_constraint_saturated[l - 1]
            )?;
        }
        if !self.canonical_shift.is_zero() {
            writeln!(f, "(d_l shifted by {} to saturate the tightest norm constraint)", fmt_q(&self.canonical_shift))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Phase {
    #[serde(rename = "unstable")]
    Unstable,
    #[serde(rename = "effective-SGD")]
    EffectiveSgd,
    #[serde(rename = "nontrivial-some")]
    NontrivialSome,
    #[serde(rename = "effective-all")]
    EffectiveAll,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Unstable => "unstable",
            Phase::EffectiveSgd => "effective-SGD",
            Phase::NontrivialSome => "nontrivial-some",
            Phase::EffectiveAll => "effective-all",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PhasePoint {
    #[serde(with = "qserde")]
    pub r_tilde: Q,
    #[serde(with = "qserde")]
    pub last_exp: Q,
    pub phase: Phase,
}

/// Position of `p` in the `(r~, d + d_{L+1})` plane and its perturbation phase.
pub fn phase_point(p: &Parameterization) -> PhasePoint {
    let rep = classify(p);
    let e = p.effective();
    let phase = if !rep.stable {
        Phase::Unstable
    } else if rep.all_effective() {
        Phase::EffectiveAll
    } else if rep.all_vanishing() {
        Phase::EffectiveSgd
    } else {
        Phase::NontrivialSome
    };
    PhasePoint {
        r_tilde: rep.r_tilde,
        last_exp: e.last_exp(),
        phase,
    }
}

/// Region label of a plane point for fixed multiplier-free `(b, c)`.
///
/// The point `(0, 1)` is labelled effective-all whenever some scaling reaching it perturbs
/// every layer effectively, which requires `b_{L+1} ≥ 1`.
pub fn plane_phase(b: &[Q], c: &[Q], r_tilde: Q, last_exp: Q) -> Result<Phase, Error> {
    if b.len() != c.len() || b.len() < 2 {
        return Err(Error::Shape("b and c need equal length ≥ 2".into()));
    }
    let o = b.len();
    let depth = o - 1;
    let c_nabla = b[o - 1].min(c[o - 1]);
    let init = b[0].is_zero() && b[1..depth].iter().all(|x| *x == half()) && b[o - 1] >= half();
    let m = (1..=depth).map(|l| c[l - 1] - indicator(l)).min().expect("depth ≥ 1");
    let r = b[o - 1].min(c[o - 1]).min(last_exp) + m;
    let stable = init
        && r >= Q::zero()
        && c[o - 1] >= Q::one()
        && b[o - 1] + r >= Q::one()
        && r_tilde >= Q::zero()
        && last_exp >= Q::one()
        && b[o - 1] + r_tilde >= Q::one();
    Ok(if !stable {
        Phase::Unstable
    } else if r_tilde.is_zero() && last_exp == Q::one() && b[o - 1] >= Q::one() {
        Phase::EffectiveAll
    } else if r_tilde > Q::zero() && last_exp > Q::one() && c_nabla + r_tilde > Q::one() {
        Phase::EffectiveSgd
    } else {
        Phase::NontrivialSome
    })
}

/// Inclusive rational grid over the `(r~, d + d_{L+1})` plane.
pub fn phase_grid(
    b: &[Q],
    c: &[Q],
    r_tilde_range: (Q, Q),
    last_range: (Q, Q),
    step: Q,
) -> Result<Vec<PhasePoint>, Error> {
    if step <= Q::zero() {
        return Err(Error::Config("grid step must be positive".into()));
    }
    let mut out = Vec::new();
    let mut rt = r_tilde_range.0;
    while rt <= r_tilde_range.1 {
        let mut le = last_range.0;
        while le <= last_range.1 {
            out.push(PhasePoint {
                r_tilde: rt,
                last_exp: le,
                phase: plane_phase(b, c, rt, le)?,
            });
            le += step;
        }
        rt += step;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::param::{q, qi};
    use crate::algebra::presets::preset;

    #[test]
    fn r_examples() {
        assert_eq!(compute_r(&preset("mupp", 3).unwrap()), Q::zero());
        assert_eq!(compute_r(&preset("mup", 3).unwrap()), Q::zero());
        assert_eq!(compute_r(&preset("sp", 3).unwrap()), qi(-1));
        assert_eq!(compute_r(&preset("ntp", 3).unwrap()), half());
        assert_eq!(compute_r(&preset("sp-stable", 3).unwrap()), half());
    }

    #[test]
    fn r_tilde_examples() {
        let l = 3;
        assert_eq!(compute_r_tilde(&preset("mup-naive", 3).unwrap(), l).unwrap(), half());
        assert_eq!(compute_r_tilde(&preset("mup-global", 3).unwrap(), l).unwrap(), qi(1));
        assert_eq!(compute_r_tilde(&preset("mupp", 3).unwrap(), l).unwrap(), Q::zero());
        assert!(compute_r_tilde(&preset("mupp", 3).unwrap(), 4).is_err());
        assert!(compute_r_tilde(&preset("mupp", 3).unwrap(), 0).is_err());
    }

    #[test]
    fn classify_examples() {
        let sp_naive = Parameterization::new(
            vec![Q::zero(), half(), half(), half()],
            vec![Q::zero(); 4],
            Q::zero(),
            vec![Q::zero(); 4],
        )
        .unwrap();
        let rep = classify(&sp_naive);
        assert!(!rep.stable);
        // Canonically d+d_{L+1} = 1 here; the blowup enters through the propagated perturbation.
        assert!(rep.violations.iter().any(|v| v == "b_{L+1}+r̃ ≥ 1 violated"));

        let g = classify(&preset("mup-global", 3).unwrap());
        assert!(g.stable);
        assert_eq!(g.effective_layers(), vec![4]);
        assert!(g.perturbation_status[1..3]
            .iter()
            .all(|s| *s == PerturbationStatus::Vanishing));

        let m = classify(&preset("mupp", 3).unwrap());
        assert!(m.stable && m.full_feature_learning() && m.all_effective());
        assert!(m.violations.is_empty());
    }

    #[test]
    fn naive_output_blowup_is_named() {
        let rep = classify(&preset("mup-naive", 3).unwrap());
        assert!(!rep.stable);
        assert!(rep.violations.contains(&"d+d_{L+1} ≥ 1 violated".to_string()));
    }

    #[test]
    fn phase_point_examples() {
        let m = phase_point(&preset("mupp", 3).unwrap());
        assert_eq!((m.r_tilde, m.last_exp, m.phase), (Q::zero(), qi(1), Phase::EffectiveAll));
        let b = preset("mup", 3).unwrap().b;
        let c = preset("mup", 3).unwrap().c;
        assert_eq!(plane_phase(&b, &c, q(-1, 2), qi(1)).unwrap(), Phase::Unstable);
        assert_eq!(plane_phase(&b, &c, qi(1), q(3, 2)).unwrap(), Phase::EffectiveSgd);
        assert_eq!(plane_phase(&b, &c, Q::zero(), qi(1)).unwrap(), Phase::EffectiveAll);
        assert_eq!(plane_phase(&b, &c, qi(1), qi(1)).unwrap(), Phase::NontrivialSome);
    }

    #[test]
    fn default_grid_has_four_phases() {
        let p = preset("mup", 3).unwrap();
        let g = phase_grid(&p.b, &p.c, (q(-1, 2), qi(2)), (Q::zero(), qi(2)), q(1, 4)).unwrap();
        assert_eq!(g.len(), 11 * 9);
        let mut seen: Vec<Phase> = g.iter().map(|p| p.phase).collect();
        seen.sort_by_key(|p| *p as u8);
        seen.dedup();
        assert_eq!(seen.len(), 4);
    }
}
