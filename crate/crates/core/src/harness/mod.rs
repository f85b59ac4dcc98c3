//! Scenario configuration, baselines, the figure sweeps and result files.

pub mod config;
pub mod output;
pub mod scenario;
pub mod sweeps;

pub use config::{load_scenario, load_scenario_str, Kappa, ScenarioConfig, SweepConfig};
pub use output::{emit_results, read_json, records_to_csv, to_csv, Format};
pub use scenario::{conventional_baseline, NmseRecord, PointEstimate, ScenarioInstance};
pub use sweeps::{
    run_convergence_sweep, run_layer_sweep, run_snr_sweep, run_sweep, Record, SweepResult, SweepVar, UserId,
};
