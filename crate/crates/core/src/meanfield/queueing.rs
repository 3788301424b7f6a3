//! Merge arrivals and the two-class non-preemptive priority M/D/1 queue
//! (merging before training) that serves them.

use serde::{Deserialize, Serialize};

use crate::params::SystemParams;

use super::MeanFieldSolution;

/// Merge tasks per second arriving at a node: `M a S w² g (1-b)²`.
pub fn merge_arrival_rate(sol: &MeanFieldSolution, params: &SystemParams) -> f64 {
    params.model_count as f64
        * sol.a
        * sol.s
        * sol.w
        * sol.w
        * sol.contact_rate
        * (1.0 - sol.b).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    /// Maximum of the load term and the sojourn-normalised delay term.
    pub lhs: f64,
    pub load_term: f64,
    pub delay_term: f64,
    /// Merge plus training utilisation.
    pub utilisation: f64,
    pub d_m: Option<f64>,
    pub d_i: Option<f64>,
}

/// Stability condition and mean merge / incorporation delays.
///
/// Training tasks arrive at `M w λ Λ / N` per node. By default that rate
/// (with `w`) is used in every training term; `analytic.condition_verbatim`
/// drops `w` from the sojourn-normalised term. The training contribution to
/// `d_M` carries no ½ residual factor unless `analytic.dm_textbook` is set.
pub fn stability_and_delays(sol: &MeanFieldSolution, params: &SystemParams) -> StabilityVerdict {
    let t_train = params.train_time;
    let t_merge = params.merge_time;
    let per_node =
        params.model_count as f64 * params.obs_rate * params.recorders as f64 / sol.mean_nodes;
    let train_rate = per_node * sol.w;
    let train_rate_sojourn = if params.analytic.condition_verbatim {
        per_node
    } else {
        train_rate
    };
    let merge_load = sol.r * t_merge;
    let load_term = train_rate * t_train + merge_load;

    let merge_free = 1.0 - merge_load;
    let train_free = 1.0 - train_rate_sojourn * t_train;
    let delay_term = if t_train == 0.0 && t_merge == 0.0 {
        0.0
    } else if merge_free <= 0.0 || train_free <= 0.0 {
        f64::INFINITY
    } else {
        let merge_wait = sol.r * t_merge * t_merge / merge_free;
        let train_wait = t_train * (2.0 - train_rate_sojourn * t_train) / train_free;
        (merge_wait + train_wait) / (sol.t_star * 2.0 * merge_free)
    };
    let lhs = load_term.max(delay_term);
    let stable = lhs <= 1.0;

    let (d_m, d_i) = if stable {
        let residual = sol.r * t_merge * t_merge / (2.0 * merge_free);
        let train_share = if params.analytic.dm_textbook {
            0.5
        } else {
            1.0
        };
        let d_m = t_merge + residual + train_share * train_rate * t_train * t_train;
        let train_busy = 1.0 - train_rate * t_train;
        let d_i = if t_train == 0.0 {
            residual / merge_free
        } else if train_busy <= 0.0 {
            f64::INFINITY
        } else {
            (residual + t_train + train_rate * t_train * t_train / (2.0 * train_busy)) / merge_free
        };
        (Some(d_m), Some(d_i))
    } else {
        (None, None)
    };
    StabilityVerdict {
        stable,
        lhs,
        load_term,
        delay_term,
        utilisation: load_term,
        d_m,
        d_i,
    }
}
