//! Cross-checks between simulated estimators, and between simulation and
//! the analytic stored-information prediction.

mod common;

use fg_core::analyze;
use fg_core::params::{EffectiveSubscription, SystemParams};

use common::{calibrated, scenario, simulate};

fn configs() -> Vec<SystemParams> {
    vec![
        scenario(1e4, 5.0, 1),
        scenario(1e4, 5.0, 3),
        SystemParams {
            obs_rate: 0.5,
            ..scenario(1e4, 5.0, 1)
        }
        .validate()
        .unwrap(),
    ]
}

#[test]
fn observation_curve_integral_matches_stored_information() {
    for p in configs() {
        let sim = simulate(&p, 4, 10_000);
        let width = p.metrics.age_bucket_s;
        let integral = sim
            .curve_integral(width)
            .expect("enough tracked observations");
        let w = EffectiveSubscription::new(p.model_count, p.subscription_limit.unwrap()).w;
        let from_curve = p.obs_rate * integral;
        let from_counts = sim.stored_info_hat / (p.model_count as f64 * w * sim.a_hat);
        let rel = (from_curve - from_counts).abs() / from_counts;
        assert!(
            rel < 0.1,
            "M={} λ={}: λ∫o = {from_curve:.3}, stored/(Mwa) = {from_counts:.3}",
            p.model_count,
            p.obs_rate
        );
    }
}

#[test]
fn analytic_stored_information_matches_simulation() {
    let p = scenario(1e4, 5.0, 1);
    let predicted = analyze(&p, calibrated(), 3)
        .unwrap()
        .stored_information
        .expect("stable defaults");
    let sim = simulate(&p, 8, 10_000);
    let rel = (predicted - sim.stored_info_hat).abs() / sim.stored_info_hat;
    assert!(
        rel <= 0.25,
        "analytic {predicted:.2} vs simulated {:.2} observations per node",
        sim.stored_info_hat
    );
}
