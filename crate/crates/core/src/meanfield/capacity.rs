use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mobility::ContactModel;
use crate::params::SystemParams;

use super::{
    solve_fixed_point, solve_observation_dde, AvailabilityCurve, MeanFieldError, MeanFieldSolution,
};

/// Mean number of fresh observations across a node's instances,
/// `M w a min(L/k, λ ∫o)`.
pub fn node_stored_information(
    sol: &MeanFieldSolution,
    curve: &AvailabilityCurve,
    params: &SystemParams,
) -> Result<f64, MeanFieldError> {
    if !sol.stable {
        return Err(MeanFieldError::UnstableSystem {
            lhs: sol.stability_lhs,
        });
    }
    let per_instance =
        (params.model_size / params.bits_per_observation).min(params.obs_rate * curve.integral_o);
    Ok(params.model_count as f64 * sol.w * sol.a * per_instance)
}

/// Stored information per unit of total observation rate,
/// `w a min(L/(λk), ∫o)`.
pub fn capacity_objective(
    sol: &MeanFieldSolution,
    curve: &AvailabilityCurve,
    params: &SystemParams,
) -> f64 {
    let size_bound = if params.obs_rate > 0.0 {
        params.model_size / (params.obs_rate * params.bits_per_observation)
    } else {
        f64::INFINITY
    };
    sol.w * sol.a * size_bound.min(curve.integral_o)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub m: u32,
    pub a: Option<f64>,
    pub stability_lhs: Option<f64>,
    pub stable: bool,
    pub integral_o: Option<f64>,
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub m_star: u32,
    pub l_star: f64,
    pub value: f64,
    pub table: Vec<CapacityRow>,
}

fn capacity_row(template: &SystemParams, cm: &ContactModel, m: u32) -> CapacityRow {
    let mut row = CapacityRow {
        m,
        a: None,
        stability_lhs: None,
        stable: false,
        integral_o: None,
        objective: None,
        error: None,
    };
    let p = match template.with_model_count(m) {
        Ok(p) => p,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let sol = match solve_fixed_point(&p, cm) {
        Ok(s) => s,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.a = Some(sol.a);
    row.stability_lhs = Some(sol.stability_lhs);
    row.stable = sol.stable;
    if !sol.stable {
        return row;
    }
    match solve_observation_dde(&sol, &p) {
        Ok(curve) => {
            row.integral_o = Some(curve.integral_o);
            row.objective = Some(capacity_objective(&sol, &curve, &p));
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Scans `M = 1..=m_max` at `L = L_m` and returns the feasible `M` with the
/// largest objective (smallest `M` on ties), together with every row.
pub fn learning_capacity(
    template: &SystemParams,
    cm: &ContactModel,
    m_max: u32,
) -> Result<CapacityResult, MeanFieldError> {
    let base = template.validate()?;
    let l_min = base.min_model_size.unwrap_or(base.model_size);
    let base = SystemParams {
        model_size: l_min,
        min_model_size: Some(l_min),
        ..base
    }
    .validate()?;
    let table: Vec<CapacityRow> = (1..=m_max.max(1))
        .into_par_iter()
        .map(|m| capacity_row(&base, cm, m))
        .collect();
    let best = table
        .iter()
        .filter_map(|r| r.objective.map(|v| (r.m, v)))
        .fold(None::<(u32, f64)>, |acc, (m, v)| match acc {
            Some((_, best)) if best >= v => acc,
            _ => Some((m, v)),
        });
    match best {
        Some((m_star, value)) => Ok(CapacityResult {
            m_star,
            l_star: l_min,
            value,
            table,
        }),
        None => Err(MeanFieldError::AllUnstable { m_max }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub m: u32,
    pub lambda: f64,
    pub stability_lhs: Option<f64>,
    pub stable: Option<bool>,
    pub error: Option<String>,
}

/// Stability left-hand side over an `(M, λ)` grid, `M` outermost. Cells
/// whose configuration or fixed point fails carry the error instead.
pub fn stability_map(
    template: &SystemParams,
    cm: &ContactModel,
    m_values: &[u32],
    lambda_values: &[f64],
) -> Vec<StabilityCell> {
    let grid: Vec<(u32, f64)> = m_values
        .iter()
        .flat_map(|&m| lambda_values.iter().map(move |&l| (m, l)))
        .collect();
    grid.into_par_iter()
        .map(|(m, lambda)| {
            let mut cell = StabilityCell {
                m,
                lambda,
                stability_lhs: None,
                stable: None,
                error: None,
            };
            let solved = template
                .with_model_count(m)
                .and_then(|p| {
                    SystemParams {
                        obs_rate: lambda,
                        ..p
                    }
                    .validate()
                })
                .map_err(MeanFieldError::from)
                .and_then(|p| solve_fixed_point(&p, cm));
            match solved {
                Ok(sol) => {
                    cell.stability_lhs = Some(sol.stability_lhs);
                    cell.stable = Some(sol.stable);
                }
                Err(e) => cell.error = Some(e.to_string()),
            }
            cell
        })
        .collect()
}
