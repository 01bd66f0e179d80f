use serde::Serialize;

use super::fit::ExponentFit;
use super::sweep::{run_width_sweep, SweepConfig, SweepTable};
use crate::error::Result;

pub const GAP_KEY: &str = "gap_rel";
pub const RESID_KEY: &str = "resid_rel";

/// Width exponents of how far the dominant layer falls short of the full gradient norm.
#[derive(Clone, Debug, Serialize)]
pub struct GradnormReport {
    /// `(|v| - max_l c_l) / |v|`.
    pub gap: ExponentFit,
    /// `sqrt(|v|² - max_l c_l²) / |v|`, the relative size of the non-dominant contributions.
    pub resid: ExponentFit,
}

impl GradnormReport {
    pub fn from_table(table: &SweepTable) -> Result<GradnormReport> {
        Ok(GradnormReport {
            gap: table.fit(GAP_KEY)?,
            resid: table.fit(RESID_KEY)?,
        })
    }
}

/// Sweeps `cfg` recording only the gap statistics and fits both.
pub fn gradnorm_dominance(cfg: &SweepConfig, jobs: usize) -> Result<GradnormReport> {
    let cfg = SweepConfig {
        statistics: vec![GAP_KEY.into(), RESID_KEY.into()],
        ..cfg.clone()
    };
    GradnormReport::from_table(&run_width_sweep(&cfg, jobs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::PerturbationRule;

    #[test]
    fn single_contribution_has_no_gap() {
        let cfg = SweepConfig {
            widths: vec![8, 16, 32],
            seeds: 1,
            steps: 4,
            preset: Some("mup-global".into()),
            rule: PerturbationRule::LastLayerOnly,
            statistics: vec![GAP_KEY.into()],
            ..SweepConfig::default()
        };
        let t = run_width_sweep(&cfg, 1).unwrap();
        let rows = t.rows(GAP_KEY);
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|(_, v)| *v == 0.0));
    }
}
