use serde::{Deserialize, Serialize};

use crate::mobility::ContactModel;
use crate::params::SystemParams;

use super::contact::ContactQuadrature;
use super::Inputs;

/// Sampled solution of the availability/busy transient.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> (f64, f64) {
        (*self.a.last().unwrap(), *self.b.last().unwrap())
    }
}

/// Smallest exchange duration the integrator resolves. The busy equation
/// has rate `1/T_S`, so steps shrink with `T_S`; this bounds the step count
/// when availability starts near zero.
const MIN_EXCHANGE_TIME: f64 = 1e-5;
const SAMPLE_INTERVAL: f64 = 1.0;

/// Integrates the drift of availability `a` and busy probability `b` with
/// classic RK4. The step is `min(0.1 s, T_S/10)`, with `S` and `T_S`
/// re-evaluated from the current `a` at every step. Samples are taken once
/// per simulated second and at the horizon.
pub fn integrate_transient_ode(
    params: &SystemParams,
    cm: &ContactModel,
    a0: f64,
    b0: f64,
    horizon: f64,
) -> Trajectory {
    let inp = Inputs::new(params, cm);
    let n = inp.mean_nodes;
    let w = inp.w;
    let g = inp.contact_rate;
    let rhs = |a: f64, b: f64, s: f64, t_s: f64| {
        let da = b / t_s * a * (1.0 - a) * s * w * w + inp.seeding * (1.0 - a) * w / n
            - inp.alpha / n * w * a;
        let db = 2.0 * g * (1.0 - b).powi(2) - b / t_s - 2.0 * inp.alpha * b / n;
        (da, db)
    };

    let quad = ContactQuadrature::new(cm, inp.transfer_time, inp.t0);
    let mut traj = Trajectory::default();
    let (mut a, mut b) = (a0.clamp(0.0, 1.0), b0.clamp(0.0, 1.0));
    let mut t = 0.0;
    let mut next_sample = 0.0;
    while t < horizon {
        if t >= next_sample {
            traj.t.push(t);
            traj.a.push(a);
            traj.b.push(b);
            next_sample += SAMPLE_INTERVAL;
        }
        let gamma = 2.0 * inp.models * w * w * a;
        let (s, t_s) = quad.eval(gamma);
        let t_s = t_s.max(MIN_EXCHANGE_TIME);
        let h = (0.1f64).min(t_s / 10.0).min(horizon - t);
        let (k1a, k1b) = rhs(a, b, s, t_s);
        let (k2a, k2b) = rhs(a + 0.5 * h * k1a, b + 0.5 * h * k1b, s, t_s);
        let (k3a, k3b) = rhs(a + 0.5 * h * k2a, b + 0.5 * h * k2b, s, t_s);
        let (k4a, k4b) = rhs(a + h * k3a, b + h * k3b, s, t_s);
        a = (a + h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)).clamp(0.0, 1.0);
        b = (b + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)).clamp(0.0, 1.0);
        t += h;
    }
    traj.t.push(t);
    traj.a.push(a);
    traj.b.push(b);
    traj
}
