//! Scenario files, Monte-Carlo sweeps over receiver families, filter design
//! runs and curve export.

mod config;
mod design;
mod export;
mod runner;

pub use config::{
    ArrayConfig, ChannelConfig, DecimationConfig, FilterConfig, MonteCarloConfig,
    MultipathConfig, NearfieldConfig, OutputConfig, Placement, ReceiverConfig, ScenarioConfig,
    SweepConfig, UserConfig,
};
pub use design::{design_filter, run_filter_design, DesignOutputs, DesignReport, VERIFY_REFINEMENT};
pub use export::{export, TAGS};
pub use runner::{
    nearfield_filter, run_config_file, run_scenario, substream, trial_seed, CurvePoint,
    FilterSummary, Row, RunOptions, RunReport,
};

use crate::error::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Process exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible { .. }
        | Error::NonMonotone { .. }
        | Error::Solver(_)
        | Error::Singular(_)
        | Error::IllConditioned { .. } => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}
