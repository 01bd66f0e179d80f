use num_traits::Zero;

use super::derive::{a_mupp, derive_mpp, mup_package_multipliers, mupp_for_multipliers, vanishing_scaling};
use super::param::{half, qi, Parameterization, Q};
use crate::error::Error;

pub const PRESET_NAMES: [&str; 9] = [
    "sp",
    "sp-stable",
    "ntp",
    "mup",
    "mup-naive",
    "mup-global",
    "mupp",
    "a-mupp",
    "mup-package",
];

pub fn sp_b(depth: usize) -> Vec<Q> {
    let mut b = vec![half(); depth + 1];
    b[0] = Q::zero();
    b
}

pub fn mup_b(depth: usize) -> Vec<Q> {
    let mut b = sp_b(depth);
    b[depth] = qi(1);
    b
}

pub fn mup_c(depth: usize) -> Vec<Q> {
    let mut c = vec![Q::zero(); depth + 1];
    c[0] = qi(-1);
    c[depth] = qi(1);
    c
}

fn with_vanishing(b: Vec<Q>, c: Vec<Q>) -> Result<Parameterization, Error> {
    let depth = b.len() - 1;
    let probe = Parameterization::new(b.clone(), c.clone(), Q::zero(), vec![Q::zero(); depth + 1])?;
    let (d, dl) = vanishing_scaling(depth, probe.c_nabla());
    Parameterization::new(b, c, d, dl)
}

/// Named parameterization with `depth` hidden layers.
///
/// Plain SGD presets carry a perturbation scaling under which every layer's perturbation vanishes.
pub fn preset(name: &str, depth: usize) -> Result<Parameterization, Error> {
    if depth < 1 {
        return Err(Error::Shape("at least one hidden layer is required".into()));
    }
    let n = depth + 1;
    let z = Q::zero();
    match name {
        "sp" => with_vanishing(sp_b(depth), vec![z; n]),
        "sp-stable" => with_vanishing(sp_b(depth), vec![qi(1); n]),
        "ntp" => {
            let mut c = vec![qi(1); n];
            c[0] = z;
            with_vanishing(sp_b(depth), c)
        }
        "mup" => with_vanishing(mup_b(depth), mup_c(depth)),
        "mup-naive" => Parameterization::new(mup_b(depth), mup_c(depth), z, vec![z; n])
            .map(|p| p.canonicalize()),
        "mup-global" => Parameterization::new(mup_b(depth), mup_c(depth), half(), vec![half(); n]),
        "mupp" => {
            let (d, dl) = derive_mpp(&mup_b(depth), &mup_c(depth))?
                .expect("output layer of muP has b = 1");
            Parameterization::new(mup_b(depth), mup_c(depth), d, dl)
        }
        "a-mupp" => with_multipliers_in_mup_class(a_mupp(depth)),
        "mup-package" => with_multipliers_in_mup_class(mup_package_multipliers(depth)),
        _ => Err(Error::UnknownPreset(name.to_string())),
    }
}

/// muP dynamics realised with multipliers `a`: `b = b_muP - a`, `c = c_muP - 2a`, plus the
/// perturbation scaling making every layer effective.
pub fn with_multipliers_in_mup_class(a: Vec<Q>) -> Result<Parameterization, Error> {
    let depth = a.len() - 1;
    let b = mup_b(depth).iter().zip(&a).map(|(b, a)| b - a).collect();
    let c = mup_c(depth).iter().zip(&a).map(|(c, a)| c - a - a).collect();
    let (d, dl) = mupp_for_multipliers(&a);
    Parameterization::new(b, c, d, dl)?.with_multipliers(a)
}
