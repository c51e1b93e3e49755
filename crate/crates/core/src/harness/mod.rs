//! End-to-end experiments: configuration, training and evaluation runs,
//! result files and manifests.

mod config;
mod output;
mod runs;

pub use config::{
    EvalSetup, ExperimentConfig, KlRange, KlSetup, PlatoonSetup, Scenario, TheoremSetup, TwoVehicleSetup, VehicleDefaults,
    CONFIG_FORMAT,
};
pub use output::{field, manifest_name, num, read_csv, Manifest, ResultWriter, CSV_FORMAT, MANIFEST_FILE, MANIFEST_FORMAT};
pub use runs::{
    eval_problems, follower_digest, plan, recompute_report, run_kl, run_platoon, run_scenario, run_statistics,
    run_theorem_suite, run_two_vehicle, scenario_of, train_problems, train_seed, RecomputedRow, RunReport, RunStatus,
    SeedResult, Workload, KL_DIR, THEOREMS_DIR,
};
