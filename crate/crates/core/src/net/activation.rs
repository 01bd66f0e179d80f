use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Relu,
    Tanh,
    /// Smoothed relu with width `sigma`.
    SigmaGelu(f64),
    /// Linear network; used for closed-form checks.
    Identity,
}

pub const DEFAULT_SIGMA: f64 = 0.05;

/// `x/2 (1 + erf(x/σ)) + σ exp(-x²/σ²) / (2√π)`.
pub fn sigma_gelu(x: f64, sigma: f64) -> f64 {
    let s = x / sigma;
    0.5 * x * (1.0 + libm::erf(s)) + 0.5 * sigma * INV_SQRT_PI * (-s * s).exp()
}

/// Derivative of [`sigma_gelu`]: `(1 + erf(x/σ)) / 2`.
pub fn sigma_gelu_prime(x: f64, sigma: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / sigma))
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::SigmaGelu(s) => sigma_gelu(x, s),
            Activation::Identity => x,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::SigmaGelu(s) => sigma_gelu_prime(x, s),
            Activation::Identity => 1.0,
        }
    }

    /// Whether the width-scaling predictions are derived for this activation (tanh and σ-gelu).
    pub fn scaling_covered(&self) -> bool {
        matches!(self, Activation::Tanh | Activation::SigmaGelu(_))
    }

    /// False for activations with a kink.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Activation::Relu)
    }

    pub fn tag(&self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::SigmaGelu(_) => 2,
            Activation::Identity => 3,
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            Activation::SigmaGelu(s) => s,
            _ => 0.0,
        }
    }

    pub fn from_tag(tag: u8, sigma: f64) -> Result<Activation, Error> {
        Ok(match tag {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 if sigma > 0.0 => Activation::SigmaGelu(sigma),
            3 => Activation::Identity,
            _ => return Err(Error::Checkpoint(format!("bad activation tag {tag} (sigma {sigma})"))),
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::SigmaGelu(s) => write!(f, "sigma_gelu:{s}"),
            Activation::Identity => f.write_str("identity"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// Accepts `relu`, `tanh`, `identity`, `sigma_gelu` and `sigma_gelu:<sigma>`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::Config(format!("unknown activation {s:?}"));
        match s.split_once(':') {
            Some(("sigma_gelu", v)) => {
                let sigma: f64 = v.parse().map_err(|_| bad())?;
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::Config(format!("sigma must be positive, got {v}")));
                }
                Ok(Activation::SigmaGelu(sigma))
            }
            Some(_) => Err(bad()),
            None => match s {
                "relu" => Ok(Activation::Relu),
                "tanh" => Ok(Activation::Tanh),
                "identity" => Ok(Activation::Identity),
                "sigma_gelu" => Ok(Activation::SigmaGelu(DEFAULT_SIGMA)),
                _ => Err(bad()),
            },
        }
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.to_string()
    }
}
