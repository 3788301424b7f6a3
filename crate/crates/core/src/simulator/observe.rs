use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::params::SystemParams;

use super::{NodeState, ObservationRecord};

/// Draws this slot's observations for every model and queues each on the
/// training queues of its recorders: `Λ` distinct in-zone subscribers (all
/// of them when fewer are available). An observation with no eligible
/// recorder is returned with an empty recorder list.
pub fn generate_observations<R: Rng + ?Sized>(
    slot_t: f64,
    params: &SystemParams,
    rng: &mut R,
    nodes: &mut [NodeState],
    next_id: &mut u64,
) -> Vec<(ObservationRecord, Vec<u32>)> {
    let mean = params.obs_rate * params.slot;
    let mut out = Vec::new();
    if mean <= 0.0 {
        return out;
    }
    let poisson = Poisson::new(mean).expect("positive mean");
    let mut eligible: Vec<u32> = Vec::new();
    for m in 0..params.model_count {
        let events = poisson.sample(rng) as u64;
        if events == 0 {
            continue;
        }
        eligible.clear();
        eligible.extend(
            nodes
                .iter()
                .filter(|n| n.in_rz && n.subscribed(m))
                .map(|n| n.id),
        );
        for _ in 0..events {
            let record = ObservationRecord {
                obs_id: *next_id,
                model_id: m,
                gen_time: slot_t,
            };
            *next_id += 1;
            let k = (params.recorders as usize).min(eligible.len());
            let recorders: Vec<u32> = index::sample(rng, eligible.len(), k)
                .into_iter()
                .map(|i| eligible[i])
                .collect();
            for &r in &recorders {
                nodes[r as usize].train_queue.push_back(record);
            }
            out.push((record, recorders));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn population(n: u32, models: u32) -> Vec<NodeState> {
        (0..n)
            .map(|i| {
                let mut s = NodeState::new(i, models);
                s.in_rz = true;
                s.subscriptions = (0..models).collect();
                s
            })
            .collect()
    }

    #[test]
    fn poisson_rate_matches() {
        let p = SystemParams {
            obs_rate: 0.1,
            slot: 0.5,
            ..SystemParams::default()
        }
        .validate()
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut nodes = population(3, 1);
        let mut next = 0;
        let slots = 1_000_000u64;
        let mut events = 0usize;
        for s in 0..slots {
            events +=
                generate_observations(s as f64 * 0.5, &p, &mut rng, &mut nodes, &mut next).len();
            for n in &mut nodes {
                n.train_queue.clear();
            }
        }
        let rate = events as f64 / (slots as f64 * 0.5);
        assert!((rate - 0.1).abs() < 0.002, "rate {rate}");
        assert_eq!(next as usize, events);
    }

    #[test]
    fn recorder_counts() {
        let p = SystemParams {
            obs_rate: 50.0,
            recorders: 3,
            model_count: 3,
            ..SystemParams::default()
        }
        .validate()
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut nodes = population(10, 3);
        nodes[4].in_rz = false;
        nodes[5].subscriptions = vec![1, 2];
        let out = generate_observations(0.0, &p, &mut rng, &mut nodes, &mut 0);
        assert!(!out.is_empty());
        for (rec, rs) in &out {
            assert_eq!(rs.len(), 3);
            let mut d = rs.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), 3);
            assert!(!rs.contains(&4));
            if rec.model_id == 0 {
                assert!(!rs.contains(&5));
            }
        }
        let queued: usize = nodes.iter().map(|n| n.train_queue.len()).sum();
        assert_eq!(queued, 3 * out.len());
    }

    #[test]
    fn no_subscriber_means_lost() {
        let p = SystemParams {
            obs_rate: 50.0,
            ..SystemParams::default()
        }
        .validate()
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut nodes = population(4, 1);
        for n in &mut nodes {
            n.in_rz = false;
        }
        let out = generate_observations(0.0, &p, &mut rng, &mut nodes, &mut 0);
        assert!(!out.is_empty());
        assert!(out.iter().all(|(_, r)| r.is_empty()));
    }

    #[test]
    fn fewer_subscribers_than_recorders() {
        let p = SystemParams {
            obs_rate: 50.0,
            recorders: 2,
            model_count: 2,
            ..SystemParams::default()
        }
        .validate()
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut nodes = population(3, 1);
        nodes[0].in_rz = false;
        nodes[1].in_rz = false;
        let out = generate_observations(0.0, &p, &mut rng, &mut nodes, &mut 0);
        for (rec, r) in &out {
            if rec.model_id == 0 {
                assert_eq!(r, &vec![2]);
            } else {
                assert!(r.is_empty());
            }
        }
    }
}
