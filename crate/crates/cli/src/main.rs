//! `mupp`: exponent algebra, width sweeps and the acceptance suite from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Preset names, repeated in the help text.
pub const PRESETS_HELP: &str = "Presets: sp, sp-stable, ntp, mup, mup-naive, mup-global, mupp, a-mupp, mup-package";

#[derive(Parser, Debug)]
#[command(name = "mupp", version, about = "Width-scaling algebra and measurement lab for SAM in MLPs", after_help = PRESETS_HELP)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for CSV/JSON results and the config echo.
    #[arg(long, global = true, env = "MUPP_OUT_DIR", default_value = "mupp-out")]
    pub out: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Exponents {
    /// Named parameterization.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(mupp_core::PRESET_NAMES))]
    pub preset: Option<String>,
    /// Hidden layers L.
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    /// Comma-separated rationals, L+1 entries.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub b: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub c: Option<String>,
    /// Global perturbation exponent.
    #[arg(long, allow_hyphen_values = true)]
    pub d: Option<String>,
    /// Per-layer perturbation exponents.
    #[arg(long, allow_hyphen_values = true)]
    pub dl: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Stability, feature learning and perturbation status of a parameterization.
    Classify {
        #[command(flatten)]
        exps: Exponents,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Perturbation scaling for a target: every layer, a layer subset, a rule variant or multipliers.
    Derive {
        #[command(flatten)]
        exps: Exponents,
        /// Comma-separated 1-based layers to perturb effectively.
        #[arg(long)]
        layers: Option<String>,
        /// Rule variant (asam_elementwise, asam_layerwise, sam_on, ...).
        #[arg(long)]
        rule: Option<String>,
        /// Multipliers: a-mupp, mup-package or comma-separated a_l.
        #[arg(long, allow_hyphen_values = true)]
        multipliers: Option<String>,
    },
    /// Width sweep with exponent fits and a verdict report.
    Sweep {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(mupp_core::PRESET_NAMES))]
        preset: Option<String>,
        /// Comma-separated widths.
        #[arg(long)]
        widths: Option<String>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        rule: Option<String>,
        /// Slope tolerance of the verdict.
        #[arg(long, default_value_t = 0.2)]
        tolerance: f64,
    },
    /// Trains one network and records losses, accuracies and a checkpoint.
    Train {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(mupp_core::PRESET_NAMES))]
        preset: Option<String>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rule: Option<String>,
    },
    /// Phase labels over the (r~, d + d_{L+1}) plane.
    PhaseDiagram {
        #[arg(long, default_value = "mup", value_parser = clap::builder::PossibleValuesParser::new(mupp_core::PRESET_NAMES))]
        preset: String,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value = "-1/2", allow_hyphen_values = true)]
        r_min: String,
        #[arg(long, default_value = "2")]
        r_max: String,
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        last_min: String,
        #[arg(long, default_value = "2")]
        last_max: String,
        #[arg(long, default_value = "1/4")]
        step: String,
    },
    /// Trains a parameterization and its equivalent and reports the largest output deviation.
    Equiv {
        #[arg(long, default_value = "mupp", value_parser = clap::builder::PossibleValuesParser::new(mupp_core::PRESET_NAMES))]
        preset: String,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Joint shift θ.
        #[arg(long, default_value = "1/2", allow_hyphen_values = true)]
        theta: String,
        /// Common shift C of every d_l.
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        shift: String,
        /// Per-layer θ_l under the layerwise-normalized rule instead of a joint shift.
        #[arg(long, allow_hyphen_values = true)]
        layerwise: Option<String>,
        /// Compare the multiplier form against its folded decoupled form.
        #[arg(long)]
        fold: bool,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = mupp_core::lab::equivalence::EQUIVALENCE_TOLERANCE)]
        tolerance: f64,
    },
    /// Learning-rate by radius grid at several widths.
    HpGrid {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(mupp_core::PRESET_NAMES))]
        preset: Option<String>,
        #[arg(long)]
        widths: Option<String>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Output distances between SAM, last-layer SAM and SGD across widths.
    Coupling {
        #[arg(long)]
        widths: Option<String>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Runs the acceptance criteria.
    Verify {
        /// Comma-separated criterion ids (default: all).
        #[arg(long)]
        criteria: Option<String>,
        /// Let the soft criterion gate the exit status.
        #[arg(long)]
        strict: bool,
    },
}

/// Exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const ACCEPTANCE: u8 = 3;
    pub const DIVERGENCE: u8 = 4;
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::CONFIG)
        }
    }
}
