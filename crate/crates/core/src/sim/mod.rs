//! Market simulation: scenarios, query streams, runs and regret books.

mod features;
mod rng;
mod runner;
mod scenario;

pub use features::{Query, QueryGenerator};
pub use rng::derived_seed;
pub use runner::{
    adversarial_setup, cumulative_regret_at, regret_ratio, risk_averse_baseline_trace,
    run_risk_averse_baseline, run_scenario, run_scenario_with, variant_sweep, RoundRecord,
    RunError, RunOutput, RunSummary, SweepCell, Variant,
};
pub use scenario::{sample_theta_star, FeatureGenSpec, RawDist, ReservePolicy, Scenario};
