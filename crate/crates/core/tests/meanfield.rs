use fg_core::meanfield::{
    evaluate_at, integrate_transient_ode, solve_fixed_point, solve_observation_dde,
    solve_observation_dde_with_step, MeanFieldSolution,
};
use fg_core::mobility::ContactModel;
use fg_core::params::SystemParams;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cm() -> ContactModel {
    ContactModel::exponential(12.4, 1.0 / 32.8, 309.5, 0.489, 156.4, 0.5)
}

#[test]
fn transient_reaches_fixed_point_from_low_start() {
    let p = SystemParams::default().validate().unwrap();
    let sol = solve_fixed_point(&p, &cm()).unwrap();
    let traj = integrate_transient_ode(&p, &cm(), 0.01, 0.01, 3000.0);
    let (a, b) = traj.last();
    assert!((a - sol.a).abs() < 1e-4, "a = {a}, fixed point {}", sol.a);
    assert!((b - sol.b).abs() < 1e-4, "b = {b}, fixed point {}", sol.b);
}

#[test]
fn transient_converges_from_random_starts() {
    let p = SystemParams {
        model_size: 1e6,
        ..SystemParams::default()
    }
    .validate()
    .unwrap();
    let sol = solve_fixed_point(&p, &cm()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a0 = rng.gen_range(0.01..1.0);
        let b0 = rng.gen_range(0.0..1.0);
        let (a, b) = integrate_transient_ode(&p, &cm(), a0, b0, 2500.0).last();
        worst = worst.max((a - sol.a).abs()).max((b - sol.b).abs());
    }
    assert!(worst < 1e-3, "worst terminal error {worst}");
}

/// Solution with full availability, no churn and a near-zero merge delay,
/// where the delay equation reduces to the logistic equation.
fn logistic_limit() -> (MeanFieldSolution, SystemParams) {
    let p = SystemParams {
        obs_rate: 0.1,
        ..SystemParams::default()
    }
    .validate()
    .unwrap();
    let mut sol = solve_fixed_point(&p, &cm()).unwrap();
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

#[test]
fn dde_matches_logistic_closed_form() {
    let (sol, p) = logistic_limit();
    let curve = solve_observation_dde(&sol, &p).unwrap();
    let beta = sol.b * sol.s / sol.t_s;
    let c = (sol.a * sol.mean_nodes).ceil();
    let start = 5.0 + 0.01;
    let mut worst = 0.0f64;
    for (&t, &o) in curve.tau.iter().zip(&curve.o) {
        if t <= start {
            continue;
        }
        let e = (beta * (t - start)).exp();
        let exact = e / (c - 1.0 + e);
        worst = worst.max((o - exact).abs());
    }
    assert!(worst < 1e-3, "max deviation {worst}");
    assert!(*curve.o.last().unwrap() > 0.9);
}

#[test]
fn dde_step_halving_self_converges() {
    let p = SystemParams::default().validate().unwrap();
    let sol = solve_fixed_point(&p, &cm()).unwrap();
    let coarse = solve_observation_dde(&sol, &p).unwrap();
    let fine = solve_observation_dde_with_step(&sol, &p, coarse.step / 2.0).unwrap();
    assert!((fine.step * 2.0 - coarse.step).abs() < 1e-12);
    let mut worst = 0.0f64;
    for (i, &o) in coarse.o.iter().enumerate() {
        let t = coarse.tau[i];
        let j = (t / fine.step).round() as usize;
        if (fine.tau[j] - t).abs() < 1e-9 {
            worst = worst.max((fine.o[j] - o).abs());
        }
    }
    assert!(worst < 1e-5, "max |o_h - o_h/2| = {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The solved availability satisfies both steady-state quadratics.
    #[test]
    fn fixed_point_residuals_vanish(
        m in 1u32..6,
        lambda in 0.001f64..5.0,
        model_size in 1e3f64..1e7,
        g_inv in 10.0f64..80.0,
        duration in 2.0f64..30.0,
    ) {
        let p = SystemParams { model_count: m, obs_rate: lambda, model_size, ..SystemParams::default() }
            .validate().unwrap();
        let cm = ContactModel::exponential(duration, 1.0 / g_inv, 309.5, 0.489, 156.4, 0.5);
        let sol = solve_fixed_point(&p, &cm).unwrap();
        let t = evaluate_at(&p, &cm, sol.a);
        prop_assert!((0.0..=1.0).contains(&sol.a));
        prop_assert!(sol.s >= 0.0 && sol.s <= 1.0);
        prop_assert!(sol.t_s <= cm.mean_duration.min(sol.gamma * p.transfer_time() + p.t0()) + 1e-9);
        let b_res = t.b * t.b - 2.0 * t.k * t.b + 1.0;
        prop_assert!(b_res.abs() < 1e-8 * t.k.max(1.0), "b residual {b_res}");
        let a_res = sol.a * sol.a - t.h * sol.a - t.c;
        prop_assert!(a_res.abs() < 1e-8 * t.h.abs().max(1.0), "a residual {a_res}");
    }
}
