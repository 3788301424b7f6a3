use serde::{Deserialize, Serialize};

use crate::params::SystemParams;

use super::{MeanFieldError, MeanFieldSolution};

/// Observation availability `o(τ)` on a uniform age grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityCurve {
    pub tau: Vec<f64>,
    pub o: Vec<f64>,
    pub step: f64,
    pub d_i: f64,
    pub d_m: f64,
    /// Value held on `[d_I, d_I + d_M]`.
    pub seed: f64,
    /// `∫ o dτ` over the lifetime.
    pub integral_o: f64,
    pub obs_rate: f64,
}

impl AvailabilityCurve {
    /// Builds a curve directly from grid values, with no incorporation delay.
    pub fn from_values(tau: Vec<f64>, o: Vec<f64>, obs_rate: f64) -> Self {
        assert_eq!(tau.len(), o.len());
        assert!(!tau.is_empty());
        let step = if tau.len() > 1 { tau[1] - tau[0] } else { 0.0 };
        let integral_o = trapezoid(&tau, &o);
        AvailabilityCurve {
            seed: o[0],
            tau,
            o,
            step,
            d_i: 0.0,
            d_m: 0.0,
            integral_o,
            obs_rate,
        }
    }

    pub fn lifetime(&self) -> f64 {
        *self.tau.last().unwrap()
    }

    /// `o(τ)`: zero before `d_I` and beyond the lifetime, linear between grid
    /// points elsewhere.
    pub fn value_at(&self, tau: f64) -> f64 {
        if tau < self.d_i || tau > self.lifetime() {
            return 0.0;
        }
        if tau <= self.d_i + self.d_m {
            return self.seed;
        }
        let i = self.tau.partition_point(|&t| t <= tau);
        if i == 0 {
            return self.o[0];
        }
        if i == self.tau.len() {
            return *self.o.last().unwrap();
        }
        let (t0, t1) = (self.tau[i - 1], self.tau[i]);
        let f = (tau - t0) / (t1 - t0);
        self.o[i - 1] + f * (self.o[i] - self.o[i - 1])
    }

    /// `R(τ) = λ o(τ)`.
    pub fn incorporation_rate(&self, tau: f64) -> f64 {
        self.obs_rate * self.value_at(tau)
    }
}

fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
        .sum()
}

/// Solves the observation-availability delay equation with the default step
/// `min(d_M/20, 0.1 s, τ_l/10⁴)`.
pub fn solve_observation_dde(
    sol: &MeanFieldSolution,
    params: &SystemParams,
) -> Result<AvailabilityCurve, MeanFieldError> {
    let d_m = sol.d_m.unwrap_or(0.0);
    let mut h = (0.1f64).min(params.obs_lifetime / 1e4);
    if d_m > 0.0 {
        h = h.min(d_m / 20.0);
    }
    solve_observation_dde_with_step(sol, params, h)
}

/// Integrates
/// `do/dτ = β[(1-a) o(τ) + a o(τ-d_M)(1 - o(τ-d_M))] - (αw/N) o(τ)`,
/// `β = b S w² / T_S`, with RK4 and linear interpolation of the delayed
/// history. `o` is zero before `d_I` and `Λ/⌈aN⌉` on `[d_I, d_I + d_M]`.
///
/// The requested step is shortened so that it divides `d_M`; delayed
/// arguments of grid points then fall on grid points. Each step is clamped
/// to `[0, 1]`.
pub fn solve_observation_dde_with_step(
    sol: &MeanFieldSolution,
    params: &SystemParams,
    step: f64,
) -> Result<AvailabilityCurve, MeanFieldError> {
    let (d_m, d_i) = match (sol.stable, sol.d_m, sol.d_i) {
        (true, Some(d_m), Some(d_i)) => (d_m, d_i),
        _ => {
            return Err(MeanFieldError::UnstableSystem {
                lhs: sol.stability_lhs,
            })
        }
    };
    if sol.a <= 0.0 {
        return Err(MeanFieldError::NoAvailability);
    }
    let lifetime = params.obs_lifetime;
    let h = if d_m > 0.0 {
        d_m / (d_m / step).ceil()
    } else {
        step
    };
    let holders = (sol.a * sol.mean_nodes).ceil().max(1.0);
    let seed = (params.recorders as f64 / holders).min(1.0);
    let w = sol.w;
    // bS/T_S written as S/(T_S/b) so that T_S = b = 0 stays finite.
    let t_s_over_b = if sol.b > 0.0 {
        sol.t_s / sol.b
    } else {
        f64::INFINITY
    };
    let beta = sol.s * w * w / t_s_over_b;
    let decay = sol.alpha * w / sol.mean_nodes;
    let a = sol.a;
    let rhs = |o: f64, od: f64| beta * ((1.0 - a) * o + a * od * (1.0 - od)) - decay * o;

    let start = d_i + d_m;
    // Computed solution: (start, seed) followed by every grid point after it.
    let mut pts_t = vec![start];
    let mut pts_o = vec![seed];
    let history = |t: f64, pts_t: &[f64], pts_o: &[f64]| -> f64 {
        if t <= start {
            return seed;
        }
        let i = pts_t.partition_point(|&x| x <= t);
        if i == pts_t.len() {
            return *pts_o.last().unwrap();
        }
        let (t0, t1) = (pts_t[i - 1], pts_t[i]);
        pts_o[i - 1] + (t - t0) / (t1 - t0) * (pts_o[i] - pts_o[i - 1])
    };

    let n_grid = (lifetime / h * (1.0 + 1e-12)).floor() as usize;
    let mut tau: Vec<f64> = (0..=n_grid).map(|k| k as f64 * h).collect();
    if lifetime - tau[n_grid] > 1e-9 * h.max(1.0) {
        tau.push(lifetime);
    } else {
        tau[n_grid] = lifetime;
    }
    let mut o = Vec::with_capacity(tau.len());
    for &t in &tau {
        if t < d_i {
            o.push(0.0);
        } else if t <= start {
            o.push(seed);
        } else {
            let (t_prev, o_prev) = (*pts_t.last().unwrap(), *pts_o.last().unwrap());
            let dt = t - t_prev;
            let delayed = |s: f64, stage: f64, pts_t: &[f64], pts_o: &[f64]| {
                if d_m > 0.0 {
                    history(s - d_m, pts_t, pts_o)
                } else {
                    stage
                }
            };
            let k1 = rhs(o_prev, delayed(t_prev, o_prev, &pts_t, &pts_o));
            let y2 = o_prev + 0.5 * dt * k1;
            let mid = t_prev + 0.5 * dt;
            let k2 = rhs(y2, delayed(mid, y2, &pts_t, &pts_o));
            let y3 = o_prev + 0.5 * dt * k2;
            let k3 = rhs(y3, delayed(mid, y3, &pts_t, &pts_o));
            let y4 = o_prev + dt * k3;
            let k4 = rhs(y4, delayed(t, y4, &pts_t, &pts_o));
            let next = (o_prev + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).clamp(0.0, 1.0);
            pts_t.push(t);
            pts_o.push(next);
            o.push(next);
        }
    }

    let integral_o = if start >= lifetime {
        seed * (lifetime - d_i).max(0.0)
    } else {
        seed * d_m + trapezoid(&pts_t, &pts_o)
    };
    Ok(AvailabilityCurve {
        tau,
        o,
        step: h,
        d_i,
        d_m,
        seed,
        integral_o,
        obs_rate: params.obs_rate,
    })
}
