//! Mean-field analysis of Floating Gossip.
//!
//! The pipeline is: steady-state model availability and busy probability
//! ([`solve_fixed_point`]), merge arrival rate and priority-queue delays
//! ([`merge_arrival_rate`], [`stability_and_delays`]), observation
//! availability by age ([`solve_observation_dde`]), and the derived
//! staleness bound, node stored information and learning capacity.

mod capacity;
mod contact;
mod dde;
mod fixed_point;
mod queueing;
mod staleness;
mod transient;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mobility::ContactModel;
use crate::params::{ParamError, SystemParams};

pub use capacity::{
    capacity_objective, learning_capacity, node_stored_information, stability_map, CapacityResult,
    CapacityRow, StabilityCell,
};
pub use contact::contact_integrals;
pub use dde::{solve_observation_dde, solve_observation_dde_with_step, AvailabilityCurve};
pub use fixed_point::{evaluate_at, solve_fixed_point, FixedPointTerms};
pub use queueing::{merge_arrival_rate, stability_and_delays, StabilityVerdict};
pub use staleness::{staleness_bound, StalenessBound};
pub use transient::{integrate_transient_ode, Trajectory};

#[derive(Debug, Error)]
pub enum MeanFieldError {
    #[error("availability fixed point did not converge after {iterations} iterations (last iterates {trace:?})")]
    NoConvergence { iterations: usize, trace: Vec<f64> },
    #[error("contact model allows no complete transfer and there is no seeding (λΛ = 0)")]
    DegenerateContactModel,
    #[error("system is unstable (stability lhs = {lhs})")]
    UnstableSystem { lhs: f64 },
    #[error("model availability is zero; observation availability is undefined")]
    NoAvailability,
    #[error("availability curve is empty")]
    CurveUnavailable,
    #[error("no observation is ever incorporated; staleness is unbounded")]
    NothingIncorporated,
    #[error("no model count in 1..={m_max} satisfies the stability condition")]
    AllUnstable { m_max: u32 },
    #[error(transparent)]
    Params(#[from] ParamError),
}

/// Scalars the analytic formulas read, gathered from the validated
/// parameters and the contact model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Inputs {
    pub models: f64,
    pub w: f64,
    /// Per-model seeding intensity `λΛ`.
    pub seeding: f64,
    pub mean_nodes: f64,
    pub alpha: f64,
    pub contact_rate: f64,
    pub t_star: f64,
    pub transfer_time: f64,
    pub t0: f64,
}

impl Inputs {
    pub fn new(params: &SystemParams, cm: &ContactModel) -> Self {
        Inputs {
            models: params.model_count as f64,
            w: params.subscription().w,
            seeding: params.obs_rate * params.recorders as f64,
            mean_nodes: cm.mean_nodes_in_rz,
            alpha: cm.alpha,
            contact_rate: cm.mean_contact_rate,
            t_star: cm.t_star,
            transfer_time: params.transfer_time(),
            t0: params.t0(),
        }
    }
}

/// Steady-state outputs of the mean-field model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldSolution {
    /// Model availability.
    pub a: f64,
    /// Busy probability.
    pub b: f64,
    pub w: f64,
    /// Mean number of exchangeable instances per contact, `2Mw²a`.
    pub gamma: f64,
    /// Probability a single transfer completes within a contact.
    pub s: f64,
    /// Mean exchange duration.
    pub t_s: f64,
    pub k: f64,
    pub h: f64,
    /// Merge-task arrival rate per node.
    pub r: f64,
    /// Total compute utilisation (merging plus training).
    pub rho: f64,
    pub stable: bool,
    pub stability_lhs: f64,
    pub d_m: Option<f64>,
    pub d_i: Option<f64>,
    /// Contact statistics the solution was computed with.
    pub contact_rate: f64,
    pub mean_nodes: f64,
    pub alpha: f64,
    pub t_star: f64,
    pub iterations: usize,
    pub method: String,
}

/// Everything `fg analytic` reports for one configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub solution: MeanFieldSolution,
    pub curve: Option<AvailabilityCurve>,
    pub staleness: Option<StalenessBound>,
    pub stored_information: Option<f64>,
    pub capacity_objective: Option<f64>,
    pub diagnostics: Vec<String>,
}

/// Fixed point, stability, observation availability, staleness bound and
/// stored information for one configuration. Downstream stages are skipped
/// (and noted in `diagnostics`) when the system is unstable.
pub fn analyze(
    params: &SystemParams,
    cm: &ContactModel,
    staleness_seed: u64,
) -> Result<AnalyticReport, MeanFieldError> {
    let solution = solve_fixed_point(params, cm)?;
    let mut report = AnalyticReport {
        solution,
        curve: None,
        staleness: None,
        stored_information: None,
        capacity_objective: None,
        diagnostics: Vec::new(),
    };
    if !report.solution.stable {
        report.diagnostics.push(format!(
            "unstable: stability lhs {} > 1; delays and curves undefined",
            report.solution.stability_lhs
        ));
        return Ok(report);
    }
    let curve = match solve_observation_dde(&report.solution, params) {
        Ok(curve) => curve,
        Err(e) => {
            report.diagnostics.push(e.to_string());
            return Ok(report);
        }
    };
    report.stored_information = Some(node_stored_information(&report.solution, &curve, params)?);
    report.capacity_objective = Some(capacity_objective(&report.solution, &curve, params));
    if params.obs_rate > 0.0 {
        match staleness_bound(
            &curve,
            params,
            params.analytic.staleness_samples,
            staleness_seed,
        ) {
            Ok(bound) => report.staleness = Some(bound),
            Err(e) => report.diagnostics.push(e.to_string()),
        }
    }
    report.curve = Some(curve);
    Ok(report)
}
