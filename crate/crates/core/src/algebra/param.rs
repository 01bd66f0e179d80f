use std::fmt;

use num_rational::Rational64;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Exact width exponent.
pub type Q = Rational64;

pub fn q(num: i64, den: i64) -> Q {
    Q::new(num, den)
}

pub fn qi(v: i64) -> Q {
    Q::from_integer(v)
}

pub fn half() -> Q {
    q(1, 2)
}

/// Parses "p/q", "p", or "-p/q".
pub fn parse_q(s: &str) -> Result<Q, Error> {
    let t = s.trim();
    let bad = || Error::MalformedRational(s.to_string());
    match t.split_once('/') {
        Some((n, d)) => {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            Ok(Q::new(n, d))
        }
        None => t.parse::<i64>().map(Q::from_integer).map_err(|_| bad()),
    }
}

pub fn fmt_q(v: &Q) -> String {
    if v.is_integer() {
        v.numer().to_string()
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}

/// Evaluates `n^e` in floating point.
pub fn width_pow(n: usize, e: Q) -> f64 {
    let x = n as f64;
    if e.is_zero() {
        1.0
    } else if *e.denom() == 2 {
        x.sqrt().powi(*e.numer() as i32)
    } else if e.is_integer() {
        x.powi(*e.numer() as i32)
    } else {
        x.powf(*e.numer() as f64 / *e.denom() as f64)
    }
}

/// Serde adapters encoding rationals as "p/q" strings.
pub mod qserde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Q, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_q(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Q, D::Error> {
        let raw = String::deserialize(d)?;
        parse_q(&raw).map_err(serde::de::Error::custom)
    }

    pub mod seq {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[Q], s: S) -> Result<S::Ok, S::Error> {
            use serde::ser::SerializeSeq;
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&fmt_q(x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Q>, D::Error> {
            let raw = Vec::<String>::deserialize(d)?;
            raw.iter()
                .map(|r| parse_q(r).map_err(serde::de::Error::custom))
                .collect()
        }
    }
}

/// Structural role of a weight matrix with respect to width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    InputLike,
    HiddenLike,
    OutputLike,
}

impl LayerRole {
    /// Role of 1-based layer `l` in a net with `depth` hidden layers.
    pub fn of(l: usize, depth: usize) -> LayerRole {
        if l == 1 {
            LayerRole::InputLike
        } else if l == depth + 1 {
            LayerRole::OutputLike
        } else {
            LayerRole::HiddenLike
        }
    }

    pub fn all() -> [LayerRole; 3] {
        [LayerRole::InputLike, LayerRole::HiddenLike, LayerRole::OutputLike]
    }
}

impl fmt::Display for LayerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerRole::InputLike => "input_like",
            LayerRole::HiddenLike => "hidden_like",
            LayerRole::OutputLike => "output_like",
        })
    }
}

/// abcd exponents of an MLP with `depth` hidden layers.
///
/// Vectors hold `depth + 1` entries; entry `i` is layer `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameterization {
    #[serde(rename = "L")]
    pub depth: usize,
    #[serde(with = "qserde::seq")]
    pub a: Vec<Q>,
    #[serde(with = "qserde::seq")]
    pub b: Vec<Q>,
    #[serde(with = "qserde::seq")]
    pub c: Vec<Q>,
    #[serde(with = "qserde::seq")]
    pub d_layers: Vec<Q>,
    #[serde(with = "qserde")]
    pub d_global: Q,
}

impl Parameterization {
    pub fn new(b: Vec<Q>, c: Vec<Q>, d_global: Q, d_layers: Vec<Q>) -> Result<Self, Error> {
        let depth = b.len().saturating_sub(1);
        let p = Parameterization {
            depth,
            a: vec![Q::zero(); b.len()],
            b,
            c,
            d_layers,
            d_global,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_multipliers(mut self, a: Vec<Q>) -> Result<Self, Error> {
        self.a = a;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.depth < 1 {
            return Err(Error::Shape("at least one hidden layer is required".into()));
        }
        let n = self.depth + 1;
        for (name, v) in [
            ("a", &self.a),
            ("b", &self.b),
            ("c", &self.c),
            ("d_layers", &self.d_layers),
        ] {
            if v.len() != n {
                return Err(Error::Shape(format!(
                    "{name} has {} entries, expected L+1 = {n}",
                    v.len()
                )));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.depth + 1
    }

    pub fn role(&self, l: usize) -> LayerRole {
        LayerRole::of(l, self.depth)
    }

    /// 1-based accessors.
    pub fn a_(&self, l: usize) -> Q {
        self.a[l - 1]
    }
    pub fn b_(&self, l: usize) -> Q {
        self.b[l - 1]
    }
    pub fn c_(&self, l: usize) -> Q {
        self.c[l - 1]
    }
    pub fn d_(&self, l: usize) -> Q {
        self.d_layers[l - 1]
    }

    pub fn has_multipliers(&self) -> bool {
        self.a.iter().any(|x| !x.is_zero())
    }

    /// Gradient scale exponent; with multipliers the output layer's effective b and c are used.
    pub fn c_nabla(&self) -> Q {
        let o = self.num_layers();
        let a = self.a_(o);
        (self.b_(o) + a).min(self.c_(o) + a + a)
    }

    /// Lower bound of the gradient-norm constraint on `d_l + a_l`.
    pub fn norm_lower(&self, l: usize) -> Q {
        match self.role(l) {
            LayerRole::InputLike => half() - self.c_nabla(),
            LayerRole::HiddenLike => Q::one() - self.c_nabla(),
            LayerRole::OutputLike => half(),
        }
    }

    /// Constraint slack; the layer's gradient-norm contribution scales as `n^{-slack}`.
    pub fn norm_slack(&self, l: usize) -> Q {
        self.d_(l) + self.a_(l) - self.norm_lower(l)
    }

    fn min_slack(&self) -> Q {
        (1..=self.num_layers())
            .map(|l| self.norm_slack(l))
            .min()
            .expect("at least two layers")
    }

    /// True when every constraint holds and at least one is tight.
    pub fn norm_constraints_valid(&self) -> bool {
        self.min_slack().is_zero()
    }

    /// Shift `C` such that `d_l + C` saturates the tightest norm constraint.
    pub fn canonical_shift(&self) -> Q {
        -self.min_slack()
    }

    /// Representative of the `d_l + C` class whose tightest norm constraint is an equality.
    pub fn canonicalize(&self) -> Parameterization {
        let shift = self.canonical_shift();
        let mut p = self.clone();
        for d in &mut p.d_layers {
            *d += shift;
        }
        p
    }

    /// Multiplier-free exponents governing the dynamics after canonicalization.
    pub fn effective(&self) -> Effective {
        let p = self.canonicalize();
        let n = p.num_layers();
        let b = (1..=n).map(|l| p.b_(l) + p.a_(l)).collect();
        let c = (1..=n).map(|l| p.c_(l) + p.a_(l) + p.a_(l)).collect();
        let d_num = (1..=n).map(|l| p.d_(l) + p.a_(l) + p.a_(l)).collect();
        Effective {
            depth: p.depth,
            b,
            c,
            d_num,
            d_global: p.d_global,
            c_nabla: p.c_nabla(),
        }
    }
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seq = |v: &[Q]| v.iter().map(fmt_q).collect::<Vec<_>>().join(", ");
        write!(
            f,
            "L={} a=({}) b=({}) c=({}) d={} d_l=({})",
            self.depth,
            seq(&self.a),
            seq(&self.b),
            seq(&self.c),
            fmt_q(&self.d_global),
            seq(&self.d_layers)
        )
    }
}

/// Canonical exponents with multipliers folded in (`b+a`, `c+2a`, `d_l+2a`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Effective {
    pub depth: usize,
    pub b: Vec<Q>,
    pub c: Vec<Q>,
    pub d_num: Vec<Q>,
    pub d_global: Q,
    pub c_nabla: Q,
}

impl Effective {
    pub fn b_(&self, l: usize) -> Q {
        self.b[l - 1]
    }
    pub fn c_(&self, l: usize) -> Q {
        self.c[l - 1]
    }
    pub fn d_(&self, l: usize) -> Q {
        self.d_num[l - 1]
    }
    pub fn out(&self) -> usize {
        self.depth + 1
    }
    /// `d + d_{L+1}`: last-layer perturbation exponent.
    pub fn last_exp(&self) -> Q {
        self.d_global + self.d_(self.out())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_roundtrip() {
        for s in ["1/2", "-3/2", "0", "7", "-1/4"] {
            assert_eq!(fmt_q(&parse_q(s).unwrap()), s);
        }
        assert_eq!(parse_q("2/4").unwrap(), half());
        assert!(parse_q("1/0").is_err());
        assert!(parse_q("x").is_err());
    }

    #[test]
    fn width_pow_matches_powf() {
        assert_eq!(width_pow(64, half()), 8.0);
        assert_eq!(width_pow(64, q(-3, 2)), 1.0 / 512.0);
        assert!((width_pow(27, q(1, 3)) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_shift_saturates_tightest() {
        let z = Q::zero();
        let p = Parameterization::new(
            vec![z, half(), half(), qi(1)],
            vec![qi(-1), z, z, qi(1)],
            z,
            vec![z; 4],
        )
        .unwrap();
        assert_eq!(p.canonical_shift(), half());
        let c = p.canonicalize();
        assert!(c.norm_constraints_valid());
        assert_eq!(c.d_layers, vec![half(); 4]);
    }

    #[test]
    fn json_uses_string_rationals_and_rejects_unknown_keys() {
        let z = Q::zero();
        let p = Parameterization::new(vec![z, half()], vec![z, qi(1)], q(-1, 2), vec![z, z]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"-1/2\""));
        let back: Parameterization = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let bad = s.replacen('{', "{\"extra\":1,", 1);
        assert!(serde_json::from_str::<Parameterization>(&bad).is_err());
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let z = Q::zero();
        assert!(Parameterization::new(vec![z, z, z], vec![z, z], z, vec![z, z, z]).is_err());
    }
}
