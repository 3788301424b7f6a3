//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion with the
//! measured values and exits non-zero when any criterion fails.

mod common;

use std::time::Instant;

use fg_core::meanfield::{
    evaluate_at, integrate_transient_ode, solve_observation_dde_with_step, AvailabilityCurve,
};
use fg_core::params::SystemParams;
use fg_core::{
    analyze, learning_capacity, run_batch, run_simulation, solve_fixed_point,
    solve_observation_dde, stability_map, staleness_bound, ContactModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{calibrated, scenario, simulate};

const SLOTS: u64 = 10_000;

struct Verdict {
    name: &'static str,
    checks: Vec<(String, bool)>,
}

impl Verdict {
    fn new(name: &'static str) -> Self {
        Verdict {
            name,
            checks: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        self.checks.push((detail.into(), ok));
    }

    fn within(&mut self, label: &str, value: f64, lo: f64, hi: f64) {
        self.check(
            (lo..=hi).contains(&value),
            format!("{label} = {value:.4} in [{lo:.4}, {hi:.4}]"),
        );
    }

    fn finish(self) -> bool {
        let ok = self.checks.iter().all(|c| c.1);
        let detail: Vec<String> = self
            .checks
            .iter()
            .map(|(d, ok)| format!("{} {d}", if *ok { "ok" } else { "MISS" }))
            .collect();
        println!(
            "{} {}: {}",
            if ok { "PASS" } else { "FAIL" },
            self.name,
            detail.join("; ")
        );
        ok
    }
}

fn relative(center: f64, tol: f64) -> (f64, f64) {
    (center * (1.0 - tol), center * (1.0 + tol))
}

fn criterion_1_calibration() -> bool {
    let mut v = Verdict::new("criterion 1 calibration");
    let p = SystemParams::default().validate().unwrap();
    let started = Instant::now();
    let cm = fg_core::calibrate_contact_model(&p, 2e4, 1).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    v.within("mean nodes in zone", cm.mean_nodes_in_rz, 154.0, 160.0);
    let (lo, hi) = relative(282.0, 0.05);
    v.within("sojourn (s)", cm.t_star, lo, hi);
    let (lo, hi) = relative(40.0, 0.15);
    v.within("inter-contact (s)", 1.0 / cm.mean_contact_rate, lo, hi);
    let (lo, hi) = relative(6.0, 0.2);
    v.within("contact duration (s)", cm.mean_duration, lo, hi);
    let (lo, hi) = relative(1.96, 0.15);
    v.within(
        "aggregate contacts/s",
        cm.mean_contact_rate * cm.mean_nodes_in_rz / 2.0,
        lo,
        hi,
    );
    v.check(elapsed < 120.0, format!("runtime {elapsed:.1} s < 120 s"));
    v.finish()
}

fn availability_pair(v: &mut Verdict, train_time: f64, small: (f64, f64), large: (f64, f64)) {
    for (l, (lo, hi)) in [(1e4, small), (1e8, large)] {
        let p = scenario(l, train_time, 1);
        let report = simulate(&p, 20, SLOTS);
        v.within(&format!("a_hat(L={l:e})"), report.a_hat, lo, hi);
        let ci = report.ci95.a_hat.unwrap_or(f64::NAN);
        v.check(
            ci <= 0.05 * report.a_hat,
            format!("CI {ci:.4} <= 5% of a_hat"),
        );
        if l == 1e4 && train_time == 5.0 {
            let sol = solve_fixed_point(&p, calibrated()).unwrap();
            let gap = (sol.a - report.a_hat).abs();
            v.check(
                gap <= 0.1,
                format!("analytic a = {:.4}, |a - a_hat| = {gap:.4} <= 0.1", sol.a),
            );
        }
    }
}

fn criterion_2_availability_short_compute() -> bool {
    let mut v = Verdict::new("criterion 2 availability, short compute");
    availability_pair(&mut v, 5.0, (0.70, 0.85), (0.06, 0.12));
    v.finish()
}

fn criterion_3_availability_long_compute() -> bool {
    let mut v = Verdict::new("criterion 3 availability, long compute");
    availability_pair(&mut v, 50.0, (0.38, 0.54), (0.047, 0.077));
    v.finish()
}

/// Model size where the availability curve crosses the midpoint of its end
/// values, interpolated in log size.
fn midpoint_size(sizes: &[f64], a: &[f64]) -> Option<f64> {
    let mid = 0.5 * (a[0] + a[a.len() - 1]);
    (1..a.len()).find_map(|i| {
        let (a0, a1) = (a[i - 1], a[i]);
        (a0 >= mid && a1 < mid).then(|| {
            let f = (a0 - mid) / (a0 - a1);
            10f64.powf(sizes[i - 1].log10() + f * (sizes[i].log10() - sizes[i - 1].log10()))
        })
    })
}

fn criterion_4_transition_location() -> bool {
    let mut v = Verdict::new("criterion 4 transition location");
    let sizes: Vec<f64> = (0..13).map(|k| 10f64.powf(4.0 + 0.5 * k as f64)).collect();
    let mut mids = Vec::new();
    for m in [1u32, 3, 10] {
        let a: Vec<f64> = sizes
            .iter()
            .map(|&l| simulate(&scenario(l, 5.0, m), 3, SLOTS).a_hat)
            .collect();
        let mid = midpoint_size(&sizes, &a);
        println!(
            "  M={m}: a_hat = {}",
            a.iter()
                .map(|x| format!("{x:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
        mids.push(mid.unwrap_or(f64::NAN));
    }
    v.within("transition size M=1 (bits)", mids[0], 6e6, 6e7);
    v.check(
        mids[1] < mids[0],
        format!("M=3 at {:.3e} left of M=1", mids[1]),
    );
    v.check(
        mids[2] < mids[1],
        format!("M=10 at {:.3e} left of M=3", mids[2]),
    );
    v.finish()
}

fn criterion_5_stability_map() -> bool {
    let mut v = Verdict::new("criterion 5 stability map");
    let template = SystemParams {
        obs_lifetime: 300.0,
        bits_per_observation: 1.0,
        ..scenario(1e4, 5.0, 1)
    }
    .validate()
    .unwrap();
    let cm = calibrated();
    // The monotone boundary crosses the box [M/2, 2M] x [λ/2, 2λ] exactly
    // when the low corner is stable and the high corner is not.
    for (m, lambda) in [(40u32, 0.01), (1, 20.0)] {
        let m_lo = (m / 2).max(1);
        let cells = stability_map(&template, cm, &[m_lo, 2 * m], &[lambda / 2.0, 2.0 * lambda]);
        let lhs = |i: usize| cells[i].stability_lhs.unwrap_or(f64::INFINITY);
        let (low, high) = (lhs(0), lhs(3));
        v.check(
            low <= 1.0 && high > 1.0,
            format!(
                "boundary near (M={m}, λ={lambda}): lhs(M={m_lo}, λ={}) = {low:.3}, lhs(M={}, λ={}) = {high:.3}",
                lambda / 2.0,
                2 * m,
                2.0 * lambda
            ),
        );
    }
    let stable_at = |m: u32| {
        let p = template.with_model_count(m).unwrap();
        let p = SystemParams {
            obs_rate: 0.01,
            ..p
        }
        .validate()
        .unwrap();
        solve_fixed_point(&p, cm).map(|s| s.stable).unwrap_or(false)
    };
    let mut limit = 0;
    while stable_at(limit + 1) {
        limit += 1;
    }
    println!("  largest stable M at λ = 0.01: {limit}");
    v.finish()
}

fn capacity_value(template: &SystemParams, cm: &ContactModel, lambda: f64) -> Option<f64> {
    let p = SystemParams {
        obs_rate: lambda,
        ..template.clone()
    }
    .validate()
    .ok()?;
    learning_capacity(&p, cm, 50).ok().map(|c| c.value)
}

/// Smallest rate at which no model count is feasible, by bisection in log
/// rate between a feasible and an infeasible rate.
fn instability_onset(template: &SystemParams, cm: &ContactModel) -> f64 {
    let (mut lo, mut hi) = (1e-3, 1e-3);
    while capacity_value(template, cm, hi).is_some() {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..30 {
        let mid = (lo * hi).sqrt();
        if capacity_value(template, cm, mid).is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn criterion_6_capacity_law() -> bool {
    let mut v = Verdict::new("criterion 6 capacity law");
    let cm = calibrated();
    let base = scenario(1e4, 5.0, 1);
    let lambdas: Vec<f64> = (0..21)
        .map(|k| 10f64.powf(-3.0 + 0.25 * k as f64))
        .collect();
    let values: Vec<f64> = lambdas
        .iter()
        .map_while(|&l| capacity_value(&base, cm, l))
        .collect();
    let peak = values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > values[best] { i } else { best });
    let rising = values[..=peak]
        .windows(2)
        .all(|w| w[1] >= w[0] * (1.0 - 1e-9));
    let falling = values[peak..]
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let collapses = capacity_value(&base, cm, 2.0 * lambdas[values.len().min(20)]).is_none();
    v.check(
        values.len() >= 3 && rising && falling && collapses,
        format!(
            "unimodal over {} feasible rates, peak {:.2} at λ = {:.3e}",
            values.len(),
            values.get(peak).copied().unwrap_or(f64::NAN),
            lambdas[peak]
        ),
    );
    let fast = scenario(1e4, 0.5, 1);
    let (slow_onset, fast_onset) = (instability_onset(&base, cm), instability_onset(&fast, cm));
    v.within(
        "onset ratio for 10x faster compute",
        fast_onset / slow_onset,
        7.0,
        13.0,
    );
    println!("  onsets: {slow_onset:.3} /s and {fast_onset:.3} /s");
    v.finish()
}

fn criterion_7_staleness() -> bool {
    let mut v = Verdict::new("criterion 7 staleness");
    let cm = calibrated();
    let configs = [
        (scenario(1e4, 5.0, 1), 0.1),
        (scenario(1e4, 5.0, 1), 1.0),
        (scenario(1e4, 5.0, 3), 0.1),
        (scenario(1e4, 50.0, 1), 0.1),
        (scenario(1e7, 5.0, 1), 0.1),
    ];
    let mut tested = 0;
    for (p, lambda) in configs {
        let p = SystemParams {
            obs_rate: lambda,
            ..p
        }
        .validate()
        .unwrap();
        let analytic = analyze(&p, cm, 7).unwrap();
        let Some(bound) = analytic.staleness else {
            continue;
        };
        let sim = simulate(&p, 4, SLOTS);
        let Some(f) = sim.staleness_hat else { continue };
        tested += 1;
        v.check(
            f >= bound.f_lower,
            format!(
                "M={} L={:e} T_T={} λ={lambda}: simulated {f:.1} s >= bound {:.1} s",
                p.model_count, p.model_size, p.train_time, bound.f_lower
            ),
        );
    }
    v.check(
        tested >= 3,
        format!("{tested} stable configurations compared"),
    );

    let lambdas: Vec<f64> = (0..29)
        .map(|k| 10f64.powf(-2.0 + 0.125 * k as f64))
        .collect();
    let peak = |m: u32| -> Option<f64> {
        lambdas
            .iter()
            .filter_map(|&l| {
                let p = SystemParams {
                    obs_rate: l,
                    ..scenario(1e4, 5.0, m)
                }
                .validate()
                .ok()?;
                analyze(&p, cm, 11).ok()?.staleness.map(|s| s.normalized)
            })
            .reduce(f64::max)
    };
    match (peak(1), peak(25)) {
        (Some(one), Some(many)) => v.within(
            "normalized peak increase M=1 -> 25",
            many / one - 1.0,
            0.05,
            0.20,
        ),
        (one, many) => v.check(
            false,
            format!("normalized peaks M=1 {one:?}, M=25 {many:?}: no stable rate for a curve"),
        ),
    }
    v.finish()
}

/// Full availability, no churn and a near-zero merge delay.
fn logistic_case() -> (fg_core::MeanFieldSolution, SystemParams) {
    let p = SystemParams {
        obs_rate: 0.1,
        ..SystemParams::default()
    }
    .validate()
    .unwrap();
    let mut sol = solve_fixed_point(&p, calibrated()).unwrap();
    sol.a = 1.0;
    sol.w = 1.0;
    sol.alpha = 0.0;
    sol.b = 0.1;
    sol.s = 1.0;
    sol.t_s = 2.0;
    sol.mean_nodes = 100.0;
    sol.stable = true;
    sol.d_i = Some(5.0);
    sol.d_m = Some(0.01);
    (sol, p)
}

fn criterion_8_property_suites() -> bool {
    let mut v = Verdict::new("criterion 8 property suites");
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    let mut worst = 0.0f64;
    for _ in 0..200 {
        let p = SystemParams {
            model_count: rng.gen_range(1..6),
            obs_rate: rng.gen_range(0.001..5.0),
            model_size: 10f64.powf(rng.gen_range(3.0..7.0)),
            ..SystemParams::default()
        }
        .validate()
        .unwrap();
        let cm = ContactModel::exponential(
            rng.gen_range(2.0..30.0),
            1.0 / rng.gen_range(10.0..80.0),
            309.5,
            0.489,
            156.4,
            0.5,
        );
        let sol = solve_fixed_point(&p, &cm).unwrap();
        let t = evaluate_at(&p, &cm, sol.a);
        let b_res = (t.b * t.b - 2.0 * t.k * t.b + 1.0).abs() / t.k.max(1.0);
        let a_res = (sol.a * sol.a - t.h * sol.a - t.c).abs() / t.h.abs().max(1.0);
        worst = worst.max(b_res).max(a_res);
    }
    v.check(
        worst < 1e-8,
        format!("fixed-point residual {worst:.1e} < 1e-8"),
    );

    let cm = calibrated();
    let p = scenario(1e6, 5.0, 1);
    let sol = solve_fixed_point(&p, cm).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (a0, b0) = (rng.gen_range(0.01..1.0), rng.gen_range(0.0..1.0));
        let (a, b) = integrate_transient_ode(&p, cm, a0, b0, 2500.0).last();
        worst = worst.max((a - sol.a).abs()).max((b - sol.b).abs());
    }
    v.check(
        worst < 1e-3,
        format!("transient terminal error {worst:.1e} < 1e-3"),
    );

    let (lsol, lp) = logistic_case();
    let curve = solve_observation_dde(&lsol, &lp).unwrap();
    let beta = lsol.b * lsol.s / lsol.t_s;
    let c = (lsol.a * lsol.mean_nodes).ceil();
    let start = 5.01;
    let worst = curve
        .tau
        .iter()
        .zip(&curve.o)
        .filter(|(&t, _)| t > start)
        .map(|(&t, &o)| {
            let e = (beta * (t - start)).exp();
            (o - e / (c - 1.0 + e)).abs()
        })
        .fold(0.0, f64::max);
    v.check(
        worst < 1e-3,
        format!("logistic oracle error {worst:.1e} < 1e-3"),
    );

    let p = SystemParams::default().validate().unwrap();
    let sol = solve_fixed_point(&p, cm).unwrap();
    let coarse = solve_observation_dde(&sol, &p).unwrap();
    let fine = solve_observation_dde_with_step(&sol, &p, coarse.step / 2.0).unwrap();
    let worst = coarse
        .tau
        .iter()
        .zip(&coarse.o)
        .map(|(&t, &o)| (fine.o[(t / fine.step).round() as usize] - o).abs())
        .fold(0.0, f64::max);
    v.check(
        worst < 1e-5,
        format!("step-halving difference {worst:.1e} < 1e-5"),
    );

    let lambda = 0.5;
    let tau: Vec<f64> = (0..=3000).map(|k| k as f64 * 0.1).collect();
    let ones = AvailabilityCurve::from_values(tau.clone(), vec![1.0; tau.len()], lambda);
    let sp = SystemParams {
        obs_rate: lambda,
        ..SystemParams::default()
    }
    .validate()
    .unwrap();
    let b = staleness_bound(&ones, &sp, 20_000, 3).unwrap();
    let err = (b.f_lower - 1.0 / lambda).abs();
    v.check(
        err <= 3.0 * b.std_error || err < 1e-12,
        format!(
            "trivial staleness {:.4} vs 1/λ = {:.4} (SE {:.1e})",
            b.f_lower,
            1.0 / lambda,
            b.std_error
        ),
    );

    let p = SystemParams {
        model_count: 3,
        obs_rate: 0.5,
        ..SystemParams::default()
    }
    .validate()
    .unwrap();
    let bytes = |seed| {
        let raw = run_simulation(&p, seed, 3000);
        let mut out = Vec::new();
        raw.write_slots_csv(&mut out).unwrap();
        raw.write_observations_csv(&mut out).unwrap();
        out
    };
    v.check(
        bytes(17) == bytes(17),
        "same seed gives byte-identical output",
    );

    let sweep = common::invariant_sweep(100, 10_000);
    v.check(
        sweep.slots >= 1_000_000 && sweep.violations.is_empty() && sweep.sessions > 10_000,
        format!(
            "{} randomized slots, {} sessions, {} violations {:?}",
            sweep.slots,
            sweep.sessions,
            sweep.violations.len(),
            sweep.violations.first()
        ),
    );
    v.finish()
}

fn criterion_9_performance() -> bool {
    let mut v = Verdict::new("criterion 9 performance");
    let p = SystemParams::default().validate().unwrap();
    let started = Instant::now();
    run_simulation(&p, 1, SLOTS);
    let one = started.elapsed().as_secs_f64();
    v.check(one < 60.0, format!("one run {one:.2} s < 60 s"));
    let seeds: Vec<u64> = (1..=20).collect();
    let started = Instant::now();
    run_batch(&p, &seeds, SLOTS);
    let batch = started.elapsed().as_secs_f64();
    v.check(
        batch < 300.0,
        format!(
            "20-run batch {batch:.1} s < 300 s on {} threads",
            rayon::current_num_threads()
        ),
    );
    v.finish()
}

fn main() {
    let criteria: [fn() -> bool; 9] = [
        criterion_1_calibration,
        criterion_2_availability_short_compute,
        criterion_3_availability_long_compute,
        criterion_4_transition_location,
        criterion_5_stability_map,
        criterion_6_capacity_law,
        criterion_7_staleness,
        criterion_8_property_suites,
        criterion_9_performance,
    ];
    let mut failed = 0;
    for (i, criterion) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(criterion) {
            Ok(true) => {}
            Ok(false) => failed += 1,
            Err(_) => {
                println!("FAIL criterion {}: panicked", i + 1);
                failed += 1;
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
