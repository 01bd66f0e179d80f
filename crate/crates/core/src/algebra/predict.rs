//! Width-exponent predictions from spectral bookkeeping.
//!
//! Every matrix is tracked by the exponent of its entry size, spectral norm and Frobenius norm.
//! Gradients at batch size one are rank one, so their spectral and Frobenius norms coincide.
//! Weight scales are those of the trained regime: the larger of the initial and the update scale.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_traits::{One, Zero};
use serde::Serialize;

use super::param::{half, qserde, Effective, LayerRole, Parameterization, Q};
use super::presets::{mup_b, mup_c};
use super::rule::PerturbationRule;
use crate::error::Error;

/// Measurable statistic. Layer indices are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Statistic {
    /// Coordinate scale of `h_0^l`.
    InitPreact(usize),
    /// Coordinate scale of `x_t^l - x_0^l` on a fixed probe input.
    ActUpdate(usize),
    /// Coordinate scale of `x~^l - x^l` at the ascent input.
    ActPerturb(usize),
    /// RMS of `f~ - f` at the ascent input.
    OutputPerturb,
    /// `OutputPerturb` measured after the first update.
    OutputPerturbPost,
    EpsFro(usize),
    EpsSpec(usize),
    WSpec(usize),
    EpsRatio(usize),
    UpdateSpec(usize),
    VNorm,
    VContrib(usize),
    /// `(|v| - max_l |v^l|) / |v|`.
    GapRel,
    /// `sqrt(|v|^2 - max_l |v^l|^2) / |v|`.
    ResidRel,
    Loss,
    Chi,
    Output,
}

impl Statistic {
    pub fn is_telemetry_only(&self) -> bool {
        matches!(self, Statistic::Loss | Statistic::Chi | Statistic::Output)
    }

    pub fn layer(&self) -> Option<usize> {
        match *self {
            Statistic::InitPreact(l)
            | Statistic::ActUpdate(l)
            | Statistic::ActPerturb(l)
            | Statistic::EpsFro(l)
            | Statistic::EpsSpec(l)
            | Statistic::WSpec(l)
            | Statistic::EpsRatio(l)
            | Statistic::UpdateSpec(l)
            | Statistic::VContrib(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statistic::InitPreact(l) => write!(f, "init_preact/{l}"),
            Statistic::ActUpdate(l) => write!(f, "act_update/{l}"),
            Statistic::ActPerturb(l) => write!(f, "act_perturb/{l}"),
            Statistic::OutputPerturb => f.write_str("output_perturb"),
            Statistic::OutputPerturbPost => f.write_str("output_perturb_post"),
            Statistic::EpsFro(l) => write!(f, "eps_fro/{l}"),
            Statistic::EpsSpec(l) => write!(f, "eps_spec/{l}"),
            Statistic::WSpec(l) => write!(f, "w_spec/{l}"),
            Statistic::EpsRatio(l) => write!(f, "eps_ratio/{l}"),
            Statistic::UpdateSpec(l) => write!(f, "update_spec/{l}"),
            Statistic::VNorm => f.write_str("v_norm"),
            Statistic::VContrib(l) => write!(f, "v_contrib/{l}"),
            Statistic::GapRel => f.write_str("gap_rel"),
            Statistic::ResidRel => f.write_str("resid_rel"),
            Statistic::Loss => f.write_str("loss"),
            Statistic::Chi => f.write_str("chi"),
            Statistic::Output => f.write_str("output"),
        }
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let unknown = || Error::UnknownStatistic(s.to_string());
        if let Some((name, idx)) = s.split_once('/') {
            let l: usize = idx.parse().map_err(|_| unknown())?;
            if l == 0 {
                return Err(unknown());
            }
            return Ok(match name {
                "init_preact" => Statistic::InitPreact(l),
                "act_update" => Statistic::ActUpdate(l),
                "act_perturb" => Statistic::ActPerturb(l),
                "eps_fro" => Statistic::EpsFro(l),
                "eps_spec" => Statistic::EpsSpec(l),
                "w_spec" => Statistic::WSpec(l),
                "eps_ratio" => Statistic::EpsRatio(l),
                "update_spec" => Statistic::UpdateSpec(l),
                "v_contrib" => Statistic::VContrib(l),
                _ => return Err(unknown()),
            });
        }
        Ok(match s {
            "output_perturb" => Statistic::OutputPerturb,
            "output_perturb_post" => Statistic::OutputPerturbPost,
            "v_norm" => Statistic::VNorm,
            "gap_rel" => Statistic::GapRel,
            "resid_rel" => Statistic::ResidRel,
            "loss" => Statistic::Loss,
            "chi" => Statistic::Chi,
            "output" => Statistic::Output,
            _ => return Err(unknown()),
        })
    }
}

fn max_opt(a: Option<Q>, b: Option<Q>) -> Option<Q> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Raw-weight scale exponents of one layer.
#[derive(Clone, Copy, Debug)]
struct LayerScales {
    w_entry: Q,
    w_spec: Q,
    w_fro: Q,
    grad: Q,
}

fn grad_hat(role: LayerRole, c_nabla: Q) -> Q {
    match role {
        LayerRole::InputLike => half() - c_nabla,
        LayerRole::HiddenLike => Q::one() - c_nabla,
        LayerRole::OutputLike => half(),
    }
}

fn grad_entry_hat(role: LayerRole, c_nabla: Q) -> Q {
    match role {
        LayerRole::OutputLike => Q::zero(),
        _ => -c_nabla,
    }
}

fn layer_scales(p: &Parameterization, e: &Effective) -> Vec<LayerScales> {
    let o = e.out();
    let c_upd = e.b_(o).min(e.c_(o));
    (1..=o)
        .map(|l| {
            let role = p.role(l);
            let b = e.b_(l);
            let upd_entry = -e.c_(l) + grad_entry_hat(role, c_upd);
            let upd_spec = -e.c_(l) + grad_hat(role, c_upd);
            let fro0 = if role == LayerRole::HiddenLike { Q::one() } else { half() } - b;
            let a = p.a_(l);
            LayerScales {
                w_entry: (-b).max(upd_entry) + a,
                w_spec: (half() - b).max(upd_spec) + a,
                w_fro: fro0.max(upd_spec) + a,
                grad: grad_hat(role, e.c_nabla) - a,
            }
        })
        .collect()
}

/// Numerator and denominator offsets: `num_l = -d - d_l + num_off_l`, `den_l = -d_l + den_off_l`.
enum Shape {
    Joint { num_off: Vec<Q>, den_off: Vec<Q> },
    PerLayer { num_off: Vec<Q> },
    Absent,
}

fn rule_shape(rule: &PerturbationRule, p: &Parameterization, s: &[LayerScales]) -> Shape {
    let g: Vec<Q> = s.iter().map(|x| x.grad).collect();
    match rule {
        PerturbationRule::None => Shape::Absent,
        PerturbationRule::SamJointLp
        | PerturbationRule::SamOn
        | PerturbationRule::LastLayerOnly
        | PerturbationRule::FirstLayerOnly => Shape::Joint {
            num_off: g.clone(),
            den_off: g,
        },
        PerturbationRule::SamDecoupled { .. } => {
            let den = rule.decoupled_denominators(p).expect("decoupled rule");
            // den_l = -dtilde_l + g_l, rewritten against d_l.
            let den_off = (0..g.len()).map(|i| g[i] + p.d_layers[i] - den[i]).collect();
            Shape::Joint { num_off: g, den_off }
        }
        PerturbationRule::AsamElementwise => Shape::Joint {
            num_off: s.iter().map(|x| x.w_entry + x.w_entry + x.grad).collect(),
            den_off: s.iter().map(|x| x.w_entry + x.grad).collect(),
        },
        PerturbationRule::AsamLayerwise => Shape::Joint {
            num_off: s.iter().map(|x| x.w_fro + x.w_fro + x.grad).collect(),
            den_off: s.iter().map(|x| x.w_fro + x.grad).collect(),
        },
        PerturbationRule::SamLayerwiseNorm => Shape::PerLayer {
            num_off: vec![Q::zero(); g.len()],
        },
        PerturbationRule::SamUnnormalized => Shape::PerLayer { num_off: g },
    }
}

/// Exponents of every predicted statistic for `p` under `rule`.
#[derive(Clone, Debug)]
pub struct Prediction {
    depth: usize,
    eps: Vec<Option<Q>>,
    w_spec: Vec<Q>,
    v_contrib: Vec<Option<Q>>,
    v_norm: Option<Q>,
    own_effect: Vec<Option<Q>>,
    act_perturb: Vec<Option<Q>>,
    act_update: Vec<Q>,
    output_perturb: Option<Q>,
    r: Q,
    update_spec: Vec<Q>,
    init_preact: Vec<Q>,
}

impl Prediction {
    pub fn new(p: &Parameterization, rule: &PerturbationRule) -> Prediction {
        let e = p.effective();
        let o = e.out();
        let depth = p.depth;
        let scales = layer_scales(p, &e);
        let perturbed: Vec<bool> = (1..=o).map(|l| rule.perturbs(l, depth)).collect();
        let d = p.d_global;

        let (eps, v_contrib, v_norm) = match rule_shape(rule, p, &scales) {
            Shape::Absent => (vec![None; o], vec![None; o], None),
            Shape::PerLayer { num_off } => (
                (0..o)
                    .map(|i| perturbed[i].then(|| -d - p.d_layers[i] + num_off[i]))
                    .collect(),
                vec![None; o],
                None,
            ),
            Shape::Joint { num_off, den_off } => {
                let den: Vec<Option<Q>> = (0..o)
                    .map(|i| perturbed[i].then(|| -p.d_layers[i] + den_off[i]))
                    .collect();
                let v = den.iter().copied().fold(None, max_opt);
                let eps = (0..o)
                    .map(|i| {
                        perturbed[i].then(|| -d - p.d_layers[i] + num_off[i] - v.expect("some layer perturbed"))
                    })
                    .collect();
                (eps, den, v)
            }
        };

        let own_effect: Vec<Option<Q>> = (1..=o)
            .map(|l| {
                eps[l - 1].map(|x| {
                    let hat = x - p.a_(l);
                    match p.role(l) {
                        LayerRole::InputLike => hat - half(),
                        LayerRole::HiddenLike => hat,
                        LayerRole::OutputLike => hat + half(),
                    }
                })
            })
            .collect();
        let mut act_perturb = Vec::with_capacity(depth);
        let mut acc = None;
        for l in 1..=depth {
            acc = max_opt(acc, own_effect[l - 1]);
            act_perturb.push(acc);
        }
        let through_output = acc.map(|x| Q::one() - e.c_nabla + x);
        let output_perturb = max_opt(own_effect[o - 1], through_output);

        // Entry size of the output-layer perturbation bounds the SAM gradient scale.
        let pert_term = eps[o - 1].map(|x| half() - (x - p.a_(o)));
        let mut grad_exp = e.b_(o).min(e.c_(o));
        if let Some(t) = pert_term {
            grad_exp = grad_exp.min(t);
        }
        let mut act_update = Vec::with_capacity(depth);
        let mut m: Option<Q> = None;
        for l in 1..=depth {
            let v = e.c_(l) - if l == 1 { Q::zero() } else { Q::one() };
            m = Some(m.map_or(v, |x| x.min(v)));
            act_update.push(-(grad_exp + m.expect("set above")));
        }
        let r = -*act_update.last().expect("depth ≥ 1");

        let update_spec = (1..=o)
            .map(|l| -e.c_(l) + grad_hat(p.role(l), grad_exp) + p.a_(l))
            .collect();

        let mut init_preact = Vec::with_capacity(depth);
        let mut s = -e.b_(1);
        init_preact.push(s);
        for l in 2..=depth {
            s = half() - e.b_(l) + s;
            init_preact.push(s);
        }

        Prediction {
            depth,
            eps,
            w_spec: scales.iter().map(|x| x.w_spec).collect(),
            v_contrib,
            v_norm,
            own_effect,
            act_perturb,
            act_update,
            output_perturb,
            r,
            update_spec,
            init_preact,
        }
    }

    /// Predicted exponent; `None` when the quantity is identically zero under the rule.
    pub fn get(&self, stat: Statistic) -> Result<Option<Q>, Error> {
        let o = self.depth + 1;
        let check = |l: usize, max: usize| {
            if l == 0 || l > max {
                Err(Error::UnknownStatistic(stat.to_string()))
            } else {
                Ok(())
            }
        };
        Ok(match stat {
            Statistic::InitPreact(l) => {
                check(l, self.depth)?;
                Some(self.init_preact[l - 1])
            }
            Statistic::ActUpdate(l) => {
                check(l, self.depth)?;
                Some(self.act_update[l - 1])
            }
            Statistic::ActPerturb(l) => {
                check(l, self.depth)?;
                self.act_perturb[l - 1]
            }
            Statistic::OutputPerturb => self.output_perturb,
            Statistic::OutputPerturbPost => self
                .output_perturb
                .map(|x| x + (-self.r).max(Q::zero())),
            Statistic::EpsFro(l) | Statistic::EpsSpec(l) => {
                check(l, o)?;
                self.eps[l - 1]
            }
            Statistic::WSpec(l) => {
                check(l, o)?;
                Some(self.w_spec[l - 1])
            }
            Statistic::EpsRatio(l) => {
                check(l, o)?;
                self.eps[l - 1].map(|x| x - self.w_spec[l - 1])
            }
            Statistic::UpdateSpec(l) => {
                check(l, o)?;
                Some(self.update_spec[l - 1])
            }
            Statistic::VNorm => self.v_norm,
            Statistic::VContrib(l) => {
                check(l, o)?;
                self.v_contrib[l - 1]
            }
            Statistic::GapRel | Statistic::ResidRel => {
                let mut c: Vec<Q> = self.v_contrib.iter().flatten().copied().collect();
                if c.len() < 2 {
                    return Ok(None);
                }
                c.sort();
                let gap = c[c.len() - 2] - c[c.len() - 1];
                if gap.is_zero() {
                    Some(Q::zero())
                } else if stat == Statistic::GapRel {
                    Some(gap + gap)
                } else {
                    Some(gap)
                }
            }
            Statistic::Loss | Statistic::Chi | Statistic::Output => {
                return Err(Error::UnknownStatistic(format!("{stat} is unpredicted telemetry")))
            }
        })
    }

    /// Exponent of the own-layer effect of `eps^l` on the next activations (0 iff effective).
    pub fn own_effect(&self, l: usize) -> Option<Q> {
        self.own_effect.get(l - 1).copied().flatten()
    }

    pub fn all_statistics(&self) -> Vec<Statistic> {
        let o = self.depth + 1;
        let mut v = Vec::new();
        for l in 1..=self.depth {
            v.push(Statistic::InitPreact(l));
            v.push(Statistic::ActUpdate(l));
            v.push(Statistic::ActPerturb(l));
        }
        v.push(Statistic::OutputPerturb);
        v.push(Statistic::OutputPerturbPost);
        for l in 1..=o {
            v.push(Statistic::EpsFro(l));
            v.push(Statistic::EpsSpec(l));
            v.push(Statistic::WSpec(l));
            v.push(Statistic::EpsRatio(l));
            v.push(Statistic::UpdateSpec(l));
            v.push(Statistic::VContrib(l));
        }
        v.push(Statistic::VNorm);
        v.push(Statistic::GapRel);
        v.push(Statistic::ResidRel);
        v
    }
}

/// All defined predicted exponents keyed by statistic name.
pub fn predict_exponents(p: &Parameterization, rule: &PerturbationRule) -> BTreeMap<String, Q> {
    let pred = Prediction::new(p, rule);
    pred.all_statistics()
        .into_iter()
        .filter_map(|s| pred.get(s).ok().flatten().map(|v| (s.to_string(), v)))
        .collect()
}

/// Predicted exponent of one statistic by name.
pub fn predict_statistic(p: &Parameterization, rule: &PerturbationRule, key: &str) -> Result<Q, Error> {
    let stat: Statistic = key.parse()?;
    Prediction::new(p, rule)
        .get(stat)?
        .ok_or_else(|| Error::UnknownStatistic(format!("{key} is identically zero under {rule}")))
}

/// Perturbation exponents of a rule on muP making every perturbed layer effective.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VariantScaling {
    pub rule: String,
    /// `d`: the radius carries `n^{-d}`.
    #[serde(with = "qserde")]
    pub d_global: Q,
    /// `d_l` per layer, `None` where the rule does not perturb.
    #[serde(serialize_with = "ser_opt_qs")]
    pub d_layers: Vec<Option<Q>>,
    /// Denominator exponents for the decoupled rule.
    #[serde(serialize_with = "ser_opt_qs")]
    pub denominators: Vec<Option<Q>>,
    /// Largest stable `d` with every `d_l = 0`, i.e. global scaling only.
    #[serde(with = "qserde")]
    pub global_only_d: Q,
    /// Layers effectively perturbed under global scaling only.
    pub global_only_effective: Vec<usize>,
}

fn ser_opt_qs<S: serde::Serializer>(v: &[Option<Q>], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        match x {
            Some(q) => seq.serialize_element(&super::param::fmt_q(q))?,
            None => seq.serialize_element(&Option::<String>::None)?,
        }
    }
    seq.end()
}

impl VariantScaling {
    /// Multiplier exponents `(-d, -d_l)` for a role; `None` layer marks a non-perturbed role.
    pub fn multiplier_exponents(&self, role: LayerRole) -> (Q, Option<Q>) {
        let depth = self.d_layers.len() - 1;
        let l = match role {
            LayerRole::InputLike => 1,
            LayerRole::HiddenLike => 2,
            LayerRole::OutputLike => depth + 1,
        };
        (-self.d_global, self.d_layers[l - 1].map(|x| -x))
    }
}

/// Solves for the all-effective scaling of `rule` on a depth-3 muP network.
///
/// Under normalized rules `d_l` is fixed up to a common shift; when all perturbed `d_l` agree
/// the rule needs no layerwise factor and they are reported as 0.
pub fn variant_scaling(rule: &PerturbationRule) -> Result<VariantScaling, Error> {
    let depth = 3;
    let o = depth + 1;
    let base = Parameterization::new(mup_b(depth), mup_c(depth), Q::zero(), vec![Q::zero(); o])?;
    let e = base.effective();
    let scales = layer_scales(&base, &e);
    let perturbed: Vec<bool> = (1..=o).map(|l| rule.perturbs(l, depth)).collect();
    let w: Vec<Q> = scales.iter().map(|s| s.w_spec).collect();

    let global_only = |ratio0: Vec<Option<Q>>| -> (Q, Vec<usize>) {
        let dstar = ratio0.iter().flatten().copied().max().expect("some layer perturbed");
        let eff = (1..=o).filter(|&l| ratio0[l - 1] == Some(dstar)).collect();
        (dstar, eff)
    };

    let none_if = |v: Vec<Q>| -> Vec<Option<Q>> {
        v.into_iter().enumerate().map(|(i, x)| perturbed[i].then_some(x)).collect()
    };

    let mut denominators = vec![None; o];
    let (d, d_layers, g_only) = match rule_shape(rule, &base, &scales) {
        Shape::Absent => {
            return Err(Error::Infeasible("rule `none` has no perturbation to scale".into()))
        }
        Shape::PerLayer { num_off } => {
            let dl = none_if((0..o).map(|i| num_off[i] - w[i]).collect());
            let g = global_only((0..o).map(|i| perturbed[i].then(|| num_off[i] - w[i])).collect());
            (Q::zero(), dl, g)
        }
        Shape::Joint { num_off, den_off } => {
            if let PerturbationRule::SamDecoupled { .. } = rule {
                // Numerators place each layer at order one; denominators balance every layer.
                let dl = none_if((0..o).map(|i| num_off[i] - w[i]).collect());
                denominators = none_if(scales.iter().map(|s| s.grad).collect());
                let g = global_only(
                    (0..o).map(|i| perturbed[i].then(|| num_off[i] - w[i] - (den_off[i] - scales[i].grad).max(Q::zero()))).collect(),
                );
                (Q::zero(), dl, g)
            } else {
                let d = (0..o)
                    .filter(|&i| perturbed[i])
                    .map(|i| num_off[i] - w[i] - den_off[i])
                    .min()
                    .expect("some layer perturbed");
                let mut dl: Vec<Q> = (0..o).map(|i| num_off[i] - w[i] - d).collect();
                let kept: Vec<Q> = (0..o).filter(|&i| perturbed[i]).map(|i| dl[i]).collect();
                if kept.iter().all(|x| *x == kept[0]) {
                    dl = vec![Q::zero(); o];
                }
                let v0 = (0..o)
                    .filter(|&i| perturbed[i])
                    .map(|i| den_off[i])
                    .max()
                    .expect("some layer perturbed");
                let g = global_only(
                    (0..o).map(|i| perturbed[i].then(|| num_off[i] - v0 - w[i])).collect(),
                );
                (d, none_if(dl), g)
            }
        }
    };
    Ok(VariantScaling {
        rule: rule.tag().to_string(),
        d_global: d,
        d_layers,
        denominators,
        global_only_d: g_only.0,
        global_only_effective: g_only.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::derive::derive_mpp;
    use crate::algebra::param::{q, qi};
    use crate::algebra::phase::{classify, effective_offset};
    use crate::algebra::presets::preset;

    fn get(p: &str, rule: PerturbationRule, key: &str) -> Q {
        predict_statistic(&preset(p, 3).unwrap(), &rule, key).unwrap()
    }

    #[test]
    fn spec_examples() {
        assert_eq!(get("mup-naive", PerturbationRule::SamJointLp, "output_perturb_post"), qi(1));
        assert_eq!(get("mup-naive", PerturbationRule::SamJointLp, "output_perturb"), half());
        assert_eq!(get("mupp", PerturbationRule::SamJointLp, "act_perturb/3"), Q::zero());
        for l in 2..=3 {
            assert_eq!(
                get("mup-global", PerturbationRule::SamJointLp, &format!("act_perturb/{l}")),
                qi(-1)
            );
        }
    }

    #[test]
    fn global_scaling_statistics() {
        let r = PerturbationRule::SamJointLp;
        assert_eq!(get("mup-global", r.clone(), "eps_fro/4"), q(-1, 2));
        assert_eq!(get("mup-global", r.clone(), "eps_ratio/2"), qi(-1));
        assert_eq!(get("mup-global", r.clone(), "eps_ratio/4"), Q::zero());
        assert_eq!(get("mup-global", r.clone(), "act_perturb/1"), qi(-2));
        assert_eq!(get("mup-global", r.clone(), "gap_rel"), qi(-1));
        assert_eq!(get("mup-global", r.clone(), "resid_rel"), q(-1, 2));
        assert_eq!(get("mupp", r.clone(), "gap_rel"), qi(-1));
        assert_eq!(get("mupp", r, "resid_rel"), q(-1, 2));
    }

    #[test]
    fn mupp_is_flat_everywhere() {
        let p = preset("mupp", 3).unwrap();
        let m = predict_exponents(&p, &PerturbationRule::SamJointLp);
        for l in 1..=4 {
            assert_eq!(m[&format!("eps_ratio/{l}")], Q::zero());
            assert_eq!(m[&format!("update_spec/{l}")] - m[&format!("w_spec/{l}")], Q::zero());
        }
        for l in 1..=3 {
            assert_eq!(m[&format!("act_update/{l}")], Q::zero());
            assert_eq!(m[&format!("init_preact/{l}")], Q::zero());
        }
        assert_eq!(m["output_perturb"], Q::zero());
        assert_eq!(m["v_norm"], Q::zero());
    }

    #[test]
    fn multiplier_presets_match_their_folded_form() {
        for name in ["a-mupp", "mup-package"] {
            let p = preset(name, 3).unwrap();
            let pr = Prediction::new(&p, &PerturbationRule::SamJointLp);
            for l in 1..=4 {
                assert_eq!(pr.own_effect(l), Some(Q::zero()), "{name} layer {l}");
                assert_eq!(pr.get(Statistic::EpsRatio(l)).unwrap(), Some(Q::zero()), "{name}");
            }
            let (f, rule) = crate::algebra::derive::fold_multipliers(&p);
            let pf = Prediction::new(&f, &rule);
            for l in 1..=4 {
                assert_eq!(pf.own_effect(l), pr.own_effect(l), "{name}");
            }
        }
    }

    #[test]
    fn unknown_keys_error() {
        let p = preset("mupp", 3).unwrap();
        let r = PerturbationRule::SamJointLp;
        assert!(matches!(predict_statistic(&p, &r, "bogus"), Err(Error::UnknownStatistic(_))));
        assert!(predict_statistic(&p, &r, "act_perturb/4").is_err());
        assert!(predict_statistic(&p, &r, "loss").is_err());
        assert!(predict_statistic(&p, &PerturbationRule::SamOn, "eps_fro/2").is_err());
    }

    #[test]
    fn statistic_names_roundtrip() {
        let pr = Prediction::new(&preset("mupp", 3).unwrap(), &PerturbationRule::SamJointLp);
        for s in pr.all_statistics() {
            assert_eq!(s.to_string().parse::<Statistic>().unwrap(), s);
        }
    }

    #[test]
    fn table_of_variant_scalings() {
        use LayerRole::*;
        let me = |rule: PerturbationRule, role| variant_scaling(&rule).unwrap().multiplier_exponents(role);

        assert_eq!(me(PerturbationRule::SamJointLp, InputLike), (half(), Some(half())));
        assert_eq!(me(PerturbationRule::SamJointLp, HiddenLike), (half(), Some(q(-1, 2))));
        assert_eq!(me(PerturbationRule::SamJointLp, OutputLike), (half(), Some(q(-3, 2))));

        assert_eq!(me(PerturbationRule::AsamLayerwise, InputLike), (Q::zero(), Some(Q::zero())));
        assert_eq!(me(PerturbationRule::AsamLayerwise, HiddenLike), (Q::zero(), Some(qi(-1))));
        assert_eq!(me(PerturbationRule::AsamLayerwise, OutputLike), (Q::zero(), Some(Q::zero())));

        for role in LayerRole::all() {
            assert_eq!(me(PerturbationRule::AsamElementwise, role), (half(), Some(Q::zero())));
        }

        assert_eq!(me(PerturbationRule::SamOn, InputLike), (half(), Some(Q::zero())));
        assert_eq!(me(PerturbationRule::SamOn, HiddenLike), (half(), None));
        assert_eq!(me(PerturbationRule::SamOn, OutputLike), (half(), None));

        let un = variant_scaling(&PerturbationRule::SamUnnormalized).unwrap();
        assert_eq!(un.d_global, Q::zero());
        assert_eq!(
            un.d_layers,
            mup_c(3).into_iter().map(Some).collect::<Vec<_>>()
        );

        let ln = variant_scaling(&PerturbationRule::SamLayerwiseNorm).unwrap();
        assert_eq!(ln.d_layers, vec![Some(q(-1, 2)), Some(Q::zero()), Some(Q::zero()), Some(half())]);

        let dp = variant_scaling(&PerturbationRule::SamDecoupled { denominators: None }).unwrap();
        assert_eq!(dp.d_layers, vec![Some(qi(-1)), Some(Q::zero()), Some(Q::zero()), Some(qi(1))]);
        assert_eq!(dp.denominators, vec![Some(q(-1, 2)), Some(Q::zero()), Some(Q::zero()), Some(half())]);
    }

    #[test]
    fn global_only_conventions() {
        let sam = variant_scaling(&PerturbationRule::SamJointLp).unwrap();
        assert_eq!(sam.global_only_d, half());
        assert_eq!(sam.global_only_effective, vec![4]);
        let la = variant_scaling(&PerturbationRule::AsamLayerwise).unwrap();
        assert_eq!(la.global_only_d, half());
        assert_eq!(la.global_only_effective, vec![2, 3]);
        let el = variant_scaling(&PerturbationRule::AsamElementwise).unwrap();
        assert_eq!(el.global_only_d, q(-1, 2));
        assert_eq!(el.global_only_effective, vec![1, 2, 3, 4]);
        let on = variant_scaling(&PerturbationRule::SamOn).unwrap();
        assert_eq!((on.global_only_d, on.global_only_effective), (q(-1, 2), vec![1]));
    }

    #[test]
    fn joint_variant_matches_mpp() {
        let v = variant_scaling(&PerturbationRule::SamJointLp).unwrap();
        let (d, dl) = derive_mpp(&mup_b(3), &mup_c(3)).unwrap().unwrap();
        assert_eq!(v.d_global, d);
        assert_eq!(v.d_layers, dl.into_iter().map(Some).collect::<Vec<_>>());
    }

    #[test]
    fn bookkeeping_agrees_with_offsets_on_a_grid() {
        // Two independent routes: the effective-offset formula and the norm bookkeeping.
        let vals: Vec<Q> = (-4..=8).map(|k| q(k, 4)).collect();
        for &d in &vals {
            for &d1 in &vals {
                for &dh in &vals {
                    let p = Parameterization::new(
                        mup_b(3),
                        mup_c(3),
                        d,
                        vec![d1, dh, dh, qi(3) / 2],
                    )
                    .unwrap();
                    let e = p.effective();
                    let pr = Prediction::new(&p, &PerturbationRule::SamJointLp);
                    let rep = classify(&p);
                    for l in 1..=4 {
                        assert_eq!(pr.own_effect(l), Some(-effective_offset(&e, l)), "{p}");
                    }
                    for l in 1..=3 {
                        assert_eq!(pr.get(Statistic::ActPerturb(l)).unwrap(), Some(-rep.r_tilde_l[l - 1]));
                        assert_eq!(pr.get(Statistic::ActUpdate(l)).unwrap(), Some(-rep.r_l[l - 1]));
                    }
                }
            }
        }
    }
}
