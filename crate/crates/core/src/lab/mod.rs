//! Width sweeps, exponent fits and the experiments that check the algebra empirically.

pub mod acceptance;
pub mod coupling;
pub mod equivalence;
pub mod fit;
pub mod gradnorm;
pub mod hpgrid;
pub mod sweep;
pub mod train;
pub mod verdict;

pub use fit::{fit_exponent, ExponentFit};
pub use sweep::{build_run, run_cell, run_width_sweep, SweepConfig, SweepRecord, SweepTable};
pub use train::{Evaluation, TrainRun};
pub use coupling::{coupling_experiment, CouplingConfig, CouplingReport};
pub use equivalence::{
    equivalence_check, layerwise_equivalence_check, multiplier_fold_check, trajectory_deviation, EquivalenceConfig,
    EQUIVALENCE_TOLERANCE,
};
pub use gradnorm::{gradnorm_dominance, GradnormReport};
pub use verdict::{verdict_report, VerdictReport, VerdictRow};
pub use hpgrid::{hp_grid, HpCell, HpGridConfig, HpGridTable, HpOptimum};
pub use acceptance::{AcceptanceRunner, CriterionResult, CRITERIA};
