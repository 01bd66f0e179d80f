use std::collections::BTreeMap;

use serde::Serialize;

use super::fit::ExponentFit;
use crate::algebra::{fmt_q, Q};

/// One line of a verdict report; `error` is set when the statistic had no prediction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerdictRow {
    pub statistic: String,
    pub slope: f64,
    pub predicted: Option<String>,
    pub tolerance: f64,
    pub r2: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct VerdictReport {
    pub rows: Vec<VerdictRow>,
}

impl VerdictReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict rows serialize")
    }
}

/// Judges each fit against `predictions[fit.statistic]` with slope tolerance `tolerance`.
pub fn verdict_report(fits: &[ExponentFit], predictions: &BTreeMap<String, Q>, tolerance: f64) -> VerdictReport {
    let rows = fits
        .iter()
        .map(|f| match predictions.get(&f.statistic) {
            Some(p) => {
                let j = f.clone().judge(*p, tolerance);
                VerdictRow {
                    statistic: j.statistic,
                    slope: j.slope,
                    predicted: Some(fmt_q(p)),
                    tolerance: j.tolerance,
                    r2: j.r_squared,
                    pass: j.pass.unwrap_or(false),
                    error: None,
                }
            }
            None => VerdictRow {
                statistic: f.statistic.clone(),
                slope: f.slope,
                predicted: None,
                tolerance,
                r2: f.r_squared,
                pass: false,
                error: Some(format!("no prediction for statistic {}", f.statistic)),
            },
        })
        .collect();
    VerdictReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{half, q, qi};
    use crate::lab::fit::fit_exponent;

    fn fit(name: &str, slope: f64) -> ExponentFit {
        let pts: Vec<(f64, f64)> = [64.0, 128.0, 256.0, 512.0].iter().map(|&n: &f64| (n, n.powf(slope))).collect();
        fit_exponent(&pts).unwrap().named(name)
    }

    #[test]
    fn empty_join_is_empty() {
        let r = verdict_report(&[], &BTreeMap::new(), 0.2);
        assert!(r.rows.is_empty());
        assert!(r.all_pass());
        assert_eq!(r.to_json(), "[]");
    }

    #[test]
    fn rows_are_judged() {
        let preds: BTreeMap<String, Q> = [
            ("output_perturb_post".to_string(), qi(1)),
            ("output_perturb".to_string(), half()),
            ("act_perturb/3".to_string(), qi(0)),
        ]
        .into_iter()
        .collect();
        let fits = [fit("output_perturb_post", 0.9), fit("output_perturb", 0.1), fit("act_perturb/3", 0.1)];
        let r = verdict_report(&fits, &preds, 0.2);
        assert_eq!(r.rows.iter().map(|r| r.pass).collect::<Vec<_>>(), vec![true, false, true]);
        assert_eq!(r.rows[2].tolerance, 0.15);
        assert_eq!(r.rows[1].predicted.as_deref(), Some("1/2"));
    }

    #[test]
    fn missing_key_gives_error_row() {
        let preds: BTreeMap<String, Q> = [("eps_fro/4".to_string(), q(-1, 2))].into_iter().collect();
        let r = verdict_report(&[fit("eps_fro/9", -0.5)], &preds, 0.2);
        assert!(!r.rows[0].pass);
        assert!(r.rows[0].error.as_deref().unwrap().contains("eps_fro/9"));
        assert!(r.to_json().contains("\"error\""));
    }
}
