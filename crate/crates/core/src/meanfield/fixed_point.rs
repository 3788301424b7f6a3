use crate::mobility::ContactModel;
use crate::params::SystemParams;

use super::contact::ContactQuadrature;
use super::{merge_arrival_rate, stability_and_delays, Inputs, MeanFieldError, MeanFieldSolution};

/// Every intermediate of one evaluation of the availability map at `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointTerms {
    pub a: f64,
    pub gamma: f64,
    pub s: f64,
    pub t_s: f64,
    pub k: f64,
    pub b: f64,
    /// `T_S / b`, finite even when both vanish.
    pub t_s_over_b: f64,
    pub h: f64,
    /// Constant term `T_S λΛ / (b N S w)` of the availability quadratic.
    pub c: f64,
    /// Positive root of `x² - Hx - c = 0`, clamped to [0, 1].
    pub image: f64,
}

pub(crate) fn evaluate(inputs: &Inputs, quad: &ContactQuadrature, a: f64) -> FixedPointTerms {
    let gamma = 2.0 * inputs.models * inputs.w * inputs.w * a;
    let (s, t_s) = quad.eval(gamma);
    let g = inputs.contact_rate;
    let n = inputs.mean_nodes;
    let (k, b, t_s_over_b) = if g > 0.0 {
        let k = 1.0 + 1.0 / (4.0 * g * t_s) + inputs.alpha / (2.0 * g * n);
        // K·T_S, written so that T_S -> 0 stays finite.
        let kt = t_s + 1.0 / (4.0 * g) + t_s * inputs.alpha / (2.0 * g * n);
        let q = kt + (kt * kt - t_s * t_s).max(0.0).sqrt();
        let b = if t_s > 0.0 { t_s / q } else { 0.0 };
        (k, b, q)
    } else {
        (f64::INFINITY, 0.0, f64::INFINITY)
    };
    let denom = n * s * inputs.w;
    let scale = if denom > 0.0 {
        t_s_over_b / denom
    } else {
        f64::INFINITY
    };
    let total = inputs.alpha + inputs.seeding;
    let (h, c, image) = if scale.is_finite() {
        let h = 1.0 - scale * total;
        let c = scale * inputs.seeding;
        let disc = (h * h + 4.0 * c).sqrt();
        let root = if h >= 0.0 {
            0.5 * (h + disc)
        } else if c > 0.0 {
            2.0 * c / (disc - h)
        } else {
            0.0
        };
        (h, c, root)
    } else {
        // No exchange ever completes: seeding balances churn.
        let root = if total > 0.0 {
            inputs.seeding / total
        } else {
            0.0
        };
        (f64::NEG_INFINITY, f64::INFINITY, root)
    };
    FixedPointTerms {
        a,
        gamma,
        s,
        t_s,
        k,
        b,
        t_s_over_b,
        h,
        c,
        image: image.clamp(0.0, 1.0),
    }
}

/// Evaluates the availability map at `a` for the given configuration.
pub fn evaluate_at(params: &SystemParams, cm: &ContactModel, a: f64) -> FixedPointTerms {
    let inputs = Inputs::new(params, cm);
    evaluate(
        &inputs,
        &ContactQuadrature::new(cm, inputs.transfer_time, inputs.t0),
        a,
    )
}

/// Solves the steady-state availability fixed point by damped iteration,
/// falling back to bisection on `image(a) - a` when the damped sequence has
/// not settled after `analytic.bisection_after` steps. The returned solution
/// also carries the merge rate, stability verdict and queueing delays.
pub fn solve_fixed_point(
    params: &SystemParams,
    cm: &ContactModel,
) -> Result<MeanFieldSolution, MeanFieldError> {
    let inputs = Inputs::new(params, cm);
    let quad = ContactQuadrature::new(cm, inputs.transfer_time, inputs.t0);
    let cfg = &params.analytic;
    if inputs.seeding == 0.0 {
        let (s_max, _) = quad.eval(0.0);
        if s_max == 0.0 {
            return Err(MeanFieldError::DegenerateContactModel);
        }
    }
    let theta = cfg.damping.min(1.0);
    let mut a = 0.5;
    let mut trace = Vec::with_capacity(32);
    let mut iterations = 0;
    let mut method = "damped";
    let mut converged = false;
    while iterations < cfg.bisection_after.min(cfg.max_iter) {
        let next = (1.0 - theta) * a + theta * evaluate(&inputs, &quad, a).image;
        iterations += 1;
        if !next.is_finite() {
            break;
        }
        if trace.len() == 32 {
            trace.remove(0);
        }
        trace.push(next);
        let step = (next - a).abs();
        a = next;
        if step < cfg.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        method = "bisection";
        let residual = |x: f64| evaluate(&inputs, &quad, x).image - x;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        if residual(lo) <= 0.0 {
            a = 0.0;
            converged = true;
        } else if residual(hi) >= 0.0 {
            a = 1.0;
            converged = true;
        } else {
            while iterations < cfg.max_iter {
                iterations += 1;
                let mid = 0.5 * (lo + hi);
                let r = residual(mid);
                if !r.is_finite() {
                    break;
                }
                if r > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                trace.push(mid);
                if hi - lo < cfg.tolerance {
                    a = 0.5 * (lo + hi);
                    converged = true;
                    break;
                }
            }
        }
    }
    if !converged {
        let tail = trace.len().saturating_sub(16);
        return Err(MeanFieldError::NoConvergence {
            iterations,
            trace: trace[tail..].to_vec(),
        });
    }
    // One undamped step: lands exactly on an absorbing a = 0.
    let a = evaluate(&inputs, &quad, a.clamp(0.0, 1.0)).image;
    let terms = evaluate(&inputs, &quad, a);
    let mut sol = MeanFieldSolution {
        a,
        b: terms.b,
        w: inputs.w,
        gamma: terms.gamma,
        s: terms.s,
        t_s: terms.t_s,
        k: terms.k,
        h: terms.h,
        r: 0.0,
        rho: 0.0,
        stable: false,
        stability_lhs: f64::INFINITY,
        d_m: None,
        d_i: None,
        contact_rate: inputs.contact_rate,
        mean_nodes: inputs.mean_nodes,
        alpha: inputs.alpha,
        t_star: inputs.t_star,
        iterations,
        method: method.into(),
    };
    sol.r = merge_arrival_rate(&sol, params);
    let verdict = stability_and_delays(&sol, params);
    sol.rho = verdict.utilisation;
    sol.stable = verdict.stable;
    sol.stability_lhs = verdict.lhs;
    sol.d_m = verdict.d_m;
    sol.d_i = verdict.d_i;
    Ok(sol)
}
