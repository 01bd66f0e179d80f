use serde::{Deserialize, Serialize};

use crate::algebra::{spectral_scaling, width_pow, Parameterization, PerturbationRule};
use crate::error::{Error, Result};
use crate::net::Dims;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// Width exponents of a parameterization.
    Bcd,
    /// Fan-ratio rules, independent of any exponent table.
    Spectral,
}

/// Resolved per-layer factors for one width.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerScales {
    /// Learning-rate factor multiplying the base rate.
    pub lr: Vec<f64>,
    /// Perturbation numerator factor.
    pub num: Vec<f64>,
    /// Factor of each layer's gradient norm inside a joint denominator.
    pub den: Vec<f64>,
    /// Global radius factor.
    pub global: f64,
}

impl LayerScales {
    /// `lr_l = n^{-c_l}` (input layer also divided by `d_in`), `num_l = n^{-d_l}`, global `n^{-d}`.
    /// The decoupled rule reads its denominators from the rule.
    pub fn bcd(p: &Parameterization, rule: &PerturbationRule, dims: &Dims) -> Result<LayerScales> {
        if p.depth != dims.depth {
            return Err(Error::Shape(format!("parameterization L={} vs depth {}", p.depth, dims.depth)));
        }
        let n = dims.width;
        let o = dims.num_layers();
        let lr = (1..=o)
            .map(|l| {
                let f = width_pow(n, -p.c_(l));
                if l == 1 {
                    f / dims.d_in as f64
                } else {
                    f
                }
            })
            .collect();
        let num: Vec<f64> = (1..=o).map(|l| width_pow(n, -p.d_(l))).collect();
        let den = match rule.decoupled_denominators(p) {
            Some(dt) => {
                if dt.len() != o {
                    return Err(Error::Config(format!("decoupled rule needs {o} denominators")));
                }
                dt.iter().map(|&e| width_pow(n, -e)).collect()
            }
            None => num.clone(),
        };
        Ok(LayerScales {
            lr,
            num,
            den,
            global: width_pow(n, -p.d_global),
        })
    }

    /// Learning rates `fan_out/fan_in`; numerators `sqrt(fan_out/fan_in)` for the layerwise-normalized
    /// rule and `fan_out/fan_in` otherwise; denominators `sqrt(fan_out/fan_in)`.
    pub fn spectral(rule: &PerturbationRule, dims: &Dims) -> Result<LayerScales> {
        let o = dims.num_layers();
        let s = (1..=o)
            .map(|l| {
                let (fi, fo) = dims.fans(l);
                spectral_scaling(fi, fo)
            })
            .collect::<Result<Vec<_>>>()?;
        let num = s
            .iter()
            .map(|x| match rule {
                PerturbationRule::SamLayerwiseNorm => x.ln_perturb_factor,
                _ => x.dp_perturb_factor,
            })
            .collect();
        Ok(LayerScales {
            lr: s.iter().map(|x| x.lr_factor).collect(),
            num,
            den: s.iter().map(|x| x.gradnorm_factor).collect(),
            global: 1.0,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.lr.len()
    }
}
