use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::param::{qserde, LayerRole, Parameterization, Q};
use crate::error::Error;

/// Ascent rule used to build the weight perturbation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRule", into = "RawRule")]
pub enum PerturbationRule {
    None,
    /// `eps = rho n^-d v/|v|` with `v^l = n^-d_l grad_l`.
    SamJointLp,
    /// `eps^l = rho n^-d n^-d_l grad_l`, no normalization.
    SamUnnormalized,
    /// `eps^l = rho n^-d n^-d_l grad_l / |grad_l|`.
    SamLayerwiseNorm,
    /// Numerator `n^-d_l`, joint denominator built from `n^-dtilde_l`.
    ///
    /// `None` resolves to the exponents under which every layer contributes at order one.
    SamDecoupled { denominators: Option<Vec<Q>> },
    AsamElementwise,
    AsamLayerwise,
    /// Joint rule restricted to input-like layers.
    SamOn,
    LastLayerOnly,
    FirstLayerOnly,
}

/// Wire form; a flat record rejects unknown keys, which internally tagged enums do not.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    tag: String,
    #[serde(default, with = "opt_seq", skip_serializing_if = "Option::is_none")]
    denominators: Option<Vec<Q>>,
}

impl TryFrom<RawRule> for PerturbationRule {
    type Error = Error;

    fn try_from(raw: RawRule) -> Result<Self, Error> {
        if !RULE_TAGS.contains(&raw.tag.as_str()) {
            return Err(Error::UnknownRule(raw.tag));
        }
        let rule: PerturbationRule = raw.tag.parse()?;
        match (rule, raw.denominators) {
            (PerturbationRule::SamDecoupled { .. }, d) => Ok(PerturbationRule::SamDecoupled { denominators: d }),
            (_, Some(_)) => Err(Error::Config(format!("rule {} takes no denominators", raw.tag))),
            (r, None) => Ok(r),
        }
    }
}

impl From<PerturbationRule> for RawRule {
    fn from(r: PerturbationRule) -> RawRule {
        let tag = r.tag().to_string();
        match r {
            PerturbationRule::SamDecoupled { denominators } => RawRule { tag, denominators },
            _ => RawRule { tag, denominators: None },
        }
    }
}

mod opt_seq {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<Q>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => qserde::seq::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Q>>, D::Error> {
        qserde::seq::deserialize(d).map(Some)
    }
}

pub const RULE_TAGS: [&str; 10] = [
    "none",
    "sam_joint_lp",
    "sam_unnormalized",
    "sam_layerwise_norm",
    "sam_decoupled",
    "asam_elementwise",
    "asam_layerwise",
    "sam_on",
    "last_layer_only",
    "first_layer_only",
];

impl PerturbationRule {
    pub fn tag(&self) -> &'static str {
        match self {
            PerturbationRule::None => "none",
            PerturbationRule::SamJointLp => "sam_joint_lp",
            PerturbationRule::SamUnnormalized => "sam_unnormalized",
            PerturbationRule::SamLayerwiseNorm => "sam_layerwise_norm",
            PerturbationRule::SamDecoupled { .. } => "sam_decoupled",
            PerturbationRule::AsamElementwise => "asam_elementwise",
            PerturbationRule::AsamLayerwise => "asam_layerwise",
            PerturbationRule::SamOn => "sam_on",
            PerturbationRule::LastLayerOnly => "last_layer_only",
            PerturbationRule::FirstLayerOnly => "first_layer_only",
        }
    }

    /// Whether 1-based layer `l` receives a perturbation.
    pub fn perturbs(&self, l: usize, depth: usize) -> bool {
        match self {
            PerturbationRule::None => false,
            PerturbationRule::SamOn => LayerRole::of(l, depth) == LayerRole::InputLike,
            PerturbationRule::FirstLayerOnly => l == 1,
            PerturbationRule::LastLayerOnly => l == depth + 1,
            _ => true,
        }
    }

    /// Denominator exponents of the decoupled rule, resolving the default against `p`.
    pub fn decoupled_denominators(&self, p: &Parameterization) -> Option<Vec<Q>> {
        match self {
            PerturbationRule::SamDecoupled { denominators } => Some(
                denominators
                    .clone()
                    .unwrap_or_else(|| (1..=p.num_layers()).map(|l| p.norm_lower(l)).collect()),
            ),
            _ => None,
        }
    }
}

impl fmt::Display for PerturbationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PerturbationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s.trim().replace('-', "_").as_str() {
            "none" | "sgd" => PerturbationRule::None,
            "sam_joint_lp" | "sam_joint" | "sam" => PerturbationRule::SamJointLp,
            "sam_unnormalized" => PerturbationRule::SamUnnormalized,
            "sam_layerwise_norm" => PerturbationRule::SamLayerwiseNorm,
            "sam_decoupled" => PerturbationRule::SamDecoupled { denominators: None },
            "asam_elementwise" => PerturbationRule::AsamElementwise,
            "asam_layerwise" => PerturbationRule::AsamLayerwise,
            "sam_on" => PerturbationRule::SamOn,
            "last_layer_only" => PerturbationRule::LastLayerOnly,
            "first_layer_only" => PerturbationRule::FirstLayerOnly,
            _ => return Err(Error::UnknownRule(s.to_string())),
        })
    }
}
