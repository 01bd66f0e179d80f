//! Exact exponent algebra of width-dependent parameterizations.

pub mod derive;
pub mod param;
pub mod phase;
pub mod predict;
pub mod presets;
pub mod rule;
pub mod search;

pub use derive::{
    a_mupp, decoupled_equivalence_transform, derive_mpp, equivalence_transform, fold_multipliers,
    global_multipliers, layerwise_equivalence_transform, mup_package_multipliers, mupp_for_multipliers,
    select_perturbation_scaling, spectral_scaling, vanishing_scaling, Selection, SpectralScaling,
};
pub use param::{fmt_q, half, parse_q, q, qi, width_pow, Effective, LayerRole, Parameterization, Q};
pub use phase::{
    classify, compute_r, compute_r_layer, compute_r_tilde, effective_offset, phase_grid, phase_point,
    plane_phase, Phase, PhasePoint, PhaseReport, PerturbationStatus, StabilityFlags,
};
pub use predict::{predict_exponents, predict_statistic, variant_scaling, Prediction, Statistic, VariantScaling};
pub use presets::{mup_b, mup_c, preset, sp_b, with_multipliers_in_mup_class, PRESET_NAMES};
pub use rule::{PerturbationRule, RULE_TAGS};
pub use search::{default_search_grids, rational_grid, search_all_effective};
