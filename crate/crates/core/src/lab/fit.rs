use serde::Serialize;

use crate::algebra::{fmt_q, Q};
use crate::error::{Error, Result};

/// Default slope tolerance of a verdict.
pub const DEFAULT_TOLERANCE: f64 = 0.2;
/// Slope band for predictions of exponent zero.
pub const FLAT_TOLERANCE: f64 = 0.15;
pub const MIN_R2: f64 = 0.9;

/// Least-squares line through `(log2 n, log2 value)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentFit {
    pub statistic: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Points dropped because their value was not positive and finite.
    pub excluded: usize,
    #[serde(serialize_with = "ser_opt_q")]
    pub predicted: Option<Q>,
    pub tolerance: f64,
    pub pass: Option<bool>,
}

fn ser_opt_q<S: serde::Serializer>(q: &Option<Q>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match q {
        Some(v) => s.serialize_some(&fmt_q(v)),
        None => s.serialize_none(),
    }
}

/// Fits `value ≈ C n^slope`. Non-positive or non-finite values are excluded and counted.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<ExponentFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, v)| *n > 0.0 && v.is_finite() && *v > 0.0)
        .map(|(n, v)| (n.log2(), v.log2()))
        .collect();
    let excluded = points.len() - kept.len();
    let mut widths: Vec<f64> = kept.iter().map(|p| p.0).collect();
    widths.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    widths.dedup();
    if widths.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 distinct widths with positive values, got {} ({excluded} excluded)",
            widths.len()
        )));
    }
    let m = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / m;
    let my = kept.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = kept.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = kept.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy <= 1e-24 * m { 1.0 } else { 1.0 - ss_res / syy };
    Ok(ExponentFit {
        statistic: String::new(),
        slope,
        intercept,
        r_squared,
        excluded,
        predicted: None,
        tolerance: DEFAULT_TOLERANCE,
        pass: None,
    })
}

impl ExponentFit {
    pub fn named(mut self, statistic: impl Into<String>) -> ExponentFit {
        self.statistic = statistic.into();
        self
    }

    /// Attaches a prediction and the verdict: flat predictions pass iff `|slope| ≤ 0.15`;
    /// others iff `|slope - predicted| ≤ tolerance` and `r² ≥ 0.9`.
    pub fn judge(mut self, predicted: Q, tolerance: f64) -> ExponentFit {
        let p = *predicted.numer() as f64 / *predicted.denom() as f64;
        let pass = if p == 0.0 {
            self.slope.abs() <= FLAT_TOLERANCE
        } else {
            (self.slope - p).abs() <= tolerance && self.r_squared >= MIN_R2
        };
        self.predicted = Some(predicted);
        self.tolerance = if p == 0.0 { FLAT_TOLERANCE } else { tolerance };
        self.pass = Some(pass);
        self
    }
}

/// Mean over seeds at each width, in linear space, ordered by width.
pub fn mean_by_width(rows: &[(usize, f64)]) -> Vec<(f64, f64)> {
    let mut widths: Vec<usize> = rows.iter().map(|r| r.0).collect();
    widths.sort_unstable();
    widths.dedup();
    widths
        .into_iter()
        .map(|w| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.0 == w).map(|r| r.1).collect();
            (w as f64, vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}
