//! Floating Gossip laboratory: mean-field analysis and slotted simulation of
//! opportunistic gossip learning inside a replication zone.
//!
//! [`params`] holds the configuration, [`mobility`] the random-direction
//! walk and contact calibration, [`meanfield`] the analytic engine,
//! [`simulator`] the slotted simulator and [`metrics`] the estimators that
//! turn simulator output into comparable numbers.

pub mod meanfield;
pub mod metrics;
pub mod mobility;
pub mod params;
pub mod simulator;

pub use meanfield::{
    analyze, learning_capacity, solve_fixed_point, solve_observation_dde, stability_map,
    staleness_bound, AnalyticReport, AvailabilityCurve, CapacityResult, MeanFieldError,
    MeanFieldSolution, StabilityCell, StalenessBound,
};
pub use metrics::{aggregate_runs, summarize, MetricsError, MetricsReport};
pub use mobility::{calibrate_contact_model, ContactModel, MobilityError};
pub use params::{ParamError, SystemParams};
pub use simulator::{run_batch, run_simulation, RawMetrics, Simulation};
