//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::OnceLock;

use fg_core::params::SystemParams;
use fg_core::simulator::{Phase, Simulation};
use fg_core::{aggregate_runs, calibrate_contact_model, run_batch, summarize};
use fg_core::{ContactModel, MetricsReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Contact model of the default configuration, measured once per test binary.
pub fn calibrated() -> &'static ContactModel {
    static CM: OnceLock<ContactModel> = OnceLock::new();
    CM.get_or_init(|| {
        let p = SystemParams::default().validate().unwrap();
        calibrate_contact_model(&p, 2e4, 1).expect("calibration")
    })
}

/// Defaults with model size, compute times and model count replaced.
pub fn scenario(model_size: f64, train_time: f64, model_count: u32) -> SystemParams {
    SystemParams {
        model_size,
        min_model_size: Some(model_size),
        train_time,
        merge_time: train_time / 2.0,
        model_count,
        ..SystemParams::default()
    }
    .validate()
    .expect("valid scenario")
}

/// Aggregated metrics over `runs` replicates seeded `1..=runs`.
pub fn simulate(params: &SystemParams, runs: u64, slots: u64) -> MetricsReport {
    let seeds: Vec<u64> = (1..=runs).collect();
    let reports: Vec<MetricsReport> = run_batch(params, &seeds, slots)
        .iter()
        .map(|raw| summarize(raw, params.metrics.warmup_fraction).expect("metrics"))
        .collect();
    aggregate_runs(&reports).expect("aggregate")
}

pub fn random_params(rng: &mut ChaCha8Rng) -> SystemParams {
    let model_count = rng.gen_range(1..=6);
    let subscription_limit = rng.gen_range(1..=model_count);
    let recorders = rng.gen_range(1..=subscription_limit.min(3));
    let area_side = rng.gen_range(60.0..200.0);
    SystemParams {
        n_total: rng.gen_range(20..=200),
        area_side,
        rz_radius: area_side / 2.0 * rng.gen_range(0.6..1.0),
        speed: rng.gen_range(0.2..3.0),
        tx_range: rng.gen_range(3.0..15.0),
        model_count,
        subscription_limit: Some(subscription_limit),
        model_size: 10f64.powf(rng.gen_range(1.0..8.0)),
        min_model_size: Some(1.0),
        bits_per_observation: rng.gen_range(1.0..4.0),
        obs_rate: rng.gen_range(0.0..2.0),
        recorders,
        train_time: rng.gen_range(0.0..10.0),
        merge_time: rng.gen_range(0.0..5.0),
        obs_lifetime: rng.gen_range(10.0..200.0),
        slot: [0.1, 0.25, 0.5, 1.0][rng.gen_range(0..4)],
        protocol: fg_core::params::ProtocolConfig {
            t0_s: [0.0, 0.05, 0.7][rng.gen_range(0..3)],
        },
        ..SystemParams::default()
    }
}

/// Checks the state after a step from the outside. Returns violations.
pub fn external_violations(
    sim: &Simulation,
    capacity: usize,
    lifetime: f64,
    t: f64,
) -> Vec<String> {
    let mut bad = Vec::new();
    let nodes = sim.nodes();
    let sessions = sim.sessions();
    let mut linked = BTreeSet::new();
    for n in nodes {
        if !n.in_rz {
            if n.instances.iter().any(Option::is_some)
                || !n.merge_queue.is_empty()
                || !n.train_queue.is_empty()
                || n.current.is_some()
                || n.link.is_some()
            {
                bad.push(format!("node {} outside the zone keeps state", n.id));
            }
            continue;
        }
        if let Some(p) = n.link {
            if nodes[p as usize].link != Some(n.id) || p == n.id {
                bad.push(format!("link {} -> {p} not reciprocated", n.id));
            }
            let k = (n.id.min(p), n.id.max(p));
            if !sessions.contains_key(&k) {
                bad.push(format!("link {k:?} without session"));
            }
            linked.insert(n.id);
        }
        for (m, inst) in n.instances.iter().enumerate() {
            let Some(inst) = inst else { continue };
            if !n.subscribed(m as u32) {
                bad.push(format!("node {} holds unsubscribed model {m}", n.id));
            }
            if inst.len() > capacity {
                bad.push(format!("node {} model {m} over capacity", n.id));
            }
            for r in &inst.training_set {
                if r.model_id != m as u32 || t - r.gen_time > lifetime + 1e-9 {
                    bad.push(format!(
                        "node {} model {m} holds stale or foreign record",
                        n.id
                    ));
                }
            }
        }
    }
    for (k, s) in sessions {
        for &x in [k.0, k.1].iter() {
            if !linked.contains(&x) {
                bad.push(format!("session {k:?} endpoint {x} not linked"));
            }
        }
        if s.phase == Phase::Transferring && s.setup_remaining != 0.0 {
            bad.push(format!("session {k:?} transferring before setup ended"));
        }
    }
    // Disjoint pairs: every linked node appears in exactly one session.
    let mut seen = BTreeSet::new();
    for k in sessions.keys() {
        if !seen.insert(k.0) || !seen.insert(k.1) {
            bad.push(format!("node in two sessions: {k:?}"));
        }
    }
    if seen != linked {
        bad.push("busy nodes do not decompose into session pairs".into());
    }
    bad
}

/// Outcome of stepping many random configurations with state checks.
pub struct InvariantSweep {
    pub slots: u64,
    pub sessions: u64,
    /// Violations found, prefixed by the configuration index.
    pub violations: Vec<String>,
}

/// Steps `configs` random configurations for `slots` slots each, checking
/// the internal counters and the external state after every slot.
pub fn invariant_sweep(configs: u64, slots: u64) -> InvariantSweep {
    let results: Vec<(u64, Vec<String>)> = (0..configs)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + c);
            let params = random_params(&mut rng)
                .validate()
                .expect("valid random config");
            let mut sim = Simulation::new(&params, c);
            let mut bad = Vec::new();
            for _ in 0..slots {
                let t = sim.time();
                sim.step();
                if bad.len() < 5 {
                    bad.extend(external_violations(
                        &sim,
                        params.capacity(),
                        params.obs_lifetime,
                        t,
                    ));
                }
            }
            let raw = sim.finish();
            let counted = raw.invariants.total();
            if counted > 0 {
                bad.push(format!("internal counters {:?}", raw.invariants));
            }
            let sessions: u64 = raw.samples.iter().map(|s| s.sessions_opened as u64).sum();
            (
                sessions,
                bad.into_iter()
                    .map(|b| format!("config {c}: {b}"))
                    .collect(),
            )
        })
        .collect();
    InvariantSweep {
        slots: configs * slots,
        sessions: results.iter().map(|r| r.0).sum(),
        violations: results.into_iter().flat_map(|r| r.1).collect(),
    }
}
