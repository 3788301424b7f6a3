use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NodeState;

/// One instance to send over a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: u32,
    pub to: u32,
    pub model_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Setup,
    Transferring,
}

/// A two-node exchange session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionState {
    pub pair: (u32, u32),
    pub phase: Phase,
    pub setup_remaining: f64,
    pub transfer_plan: Vec<Transfer>,
    /// Index of the transfer in flight.
    pub next: usize,
    pub bits_remaining_current: f64,
    /// Size of every instance on this session.
    pub instance_bits: f64,
}

impl ConnectionState {
    pub fn new(pair: (u32, u32), plan: Vec<Transfer>, t0: f64, model_size: f64) -> Self {
        ConnectionState {
            pair,
            phase: if t0 > 0.0 {
                Phase::Setup
            } else {
                Phase::Transferring
            },
            setup_remaining: t0,
            transfer_plan: plan,
            next: 0,
            bits_remaining_current: model_size,
            instance_bits: model_size,
        }
    }

    pub fn done(&self) -> bool {
        self.next >= self.transfer_plan.len()
    }

    /// Uses up to `budget` seconds of link time starting at `start`. Returns
    /// the time used and each completed transfer with its completion time.
    pub fn advance(&mut self, budget: f64, start: f64, rate: f64) -> (f64, Vec<(Transfer, f64)>) {
        let mut left = budget;
        let mut delivered = Vec::new();
        if self.phase == Phase::Setup {
            let spent = self.setup_remaining.min(left);
            self.setup_remaining -= spent;
            left -= spent;
            if self.setup_remaining <= 1e-12 {
                self.setup_remaining = 0.0;
                self.phase = Phase::Transferring;
            }
        }
        while self.phase == Phase::Transferring && !self.done() && left > 0.0 {
            let need = self.bits_remaining_current / rate;
            if need <= left + 1e-12 {
                left = (left - need).max(0.0);
                delivered.push((self.transfer_plan[self.next], start + budget - left));
                self.next += 1;
                self.bits_remaining_current = self.instance_bits;
            } else {
                self.bits_remaining_current -= left * rate;
                left = 0.0;
            }
        }
        (budget - left, delivered)
    }
}

/// Transfers worth making between `a` and `b`: for every model both
/// subscribe to, `x -> y` is included when `x` holds an instance whose
/// unexpired training set is not contained in `y`'s. Shuffled.
pub fn plan_exchange<R: Rng + ?Sized>(
    a: &NodeState,
    b: &NodeState,
    now: f64,
    lifetime: f64,
    rng: &mut R,
) -> Vec<Transfer> {
    let mut plan = Vec::new();
    for &m in &a.subscriptions {
        if b.subscriptions.binary_search(&m).is_err() {
            continue;
        }
        let (ia, ib) = (a.instance(m), b.instance(m));
        if let Some(x) = ia {
            if !x.is_subset_at(ib, now, lifetime) {
                plan.push(Transfer {
                    from: a.id,
                    to: b.id,
                    model_id: m,
                });
            }
        }
        if let Some(y) = ib {
            if !y.is_subset_at(ia, now, lifetime) {
                plan.push(Transfer {
                    from: b.id,
                    to: a.id,
                    model_id: m,
                });
            }
        }
    }
    plan.shuffle(rng);
    plan
}
