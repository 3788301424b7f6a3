//! Slotted simulation of Floating Gossip.
//!
//! Each slot runs, in order: mobility, zone entry/exit (purging leavers and
//! drawing subscriptions for arrivals), observation generation, connection
//! management and transfers, compute service (merges before training,
//! non-preemptive), and sampling. A run is a pure function of
//! `(params, seed, slots)`.

mod exchange;
mod instance;
mod observe;
mod raw;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mobility::{detect_contacts, step_mobility, Arena, ContactTracker, NodeKinematics};
use crate::params::SystemParams;

pub use exchange::{plan_exchange, ConnectionState, Phase, Transfer};
pub use instance::{
    merge_instances, train_instance, InstanceError, ModelInstance, ObservationRecord,
};
pub use observe::generate_observations;
pub use raw::{InvariantCounters, ObservationTrace, RawMetrics, SlotSample};

/// Compute task in service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Task {
    Merge(ModelInstance),
    Train(ObservationRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: u32,
    pub kinematics: NodeKinematics,
    pub in_rz: bool,
    /// Sorted model ids.
    pub subscriptions: Vec<u32>,
    /// Indexed by model id; `None` is the default model.
    pub instances: Vec<Option<ModelInstance>>,
    pub merge_queue: VecDeque<ModelInstance>,
    pub train_queue: VecDeque<ObservationRecord>,
    pub current: Option<Task>,
    pub compute_busy_until: f64,
    pub link: Option<u32>,
}

impl NodeState {
    pub fn new(id: u32, model_count: u32) -> Self {
        NodeState {
            id,
            kinematics: NodeKinematics {
                x: 0.0,
                y: 0.0,
                heading: 0.0,
                epoch_remaining: 0.0,
            },
            in_rz: false,
            subscriptions: Vec::new(),
            instances: vec![None; model_count as usize],
            merge_queue: VecDeque::new(),
            train_queue: VecDeque::new(),
            current: None,
            compute_busy_until: 0.0,
            link: None,
        }
    }

    pub fn subscribed(&self, model: u32) -> bool {
        self.subscriptions.binary_search(&model).is_ok()
    }

    pub fn instance(&self, model: u32) -> Option<&ModelInstance> {
        self.instances[model as usize].as_ref()
    }

    fn purge(&mut self) {
        self.subscriptions.clear();
        self.instances.iter_mut().for_each(|i| *i = None);
        self.merge_queue.clear();
        self.train_queue.clear();
        self.current = None;
        self.link = None;
    }
}

/// Holder statistics of one observation still within its lifetime.
#[derive(Debug, Clone)]
struct Track {
    obs_id: u64,
    model_id: u32,
    gen_time: f64,
    first_trained: Option<f64>,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

const EPS: f64 = 1e-9;

pub struct Simulation {
    params: SystemParams,
    arena: Arena,
    rng: ChaCha8Rng,
    nodes: Vec<NodeState>,
    sessions: BTreeMap<(u32, u32), ConnectionState>,
    tracker: ContactTracker,
    slot: u64,
    next_obs_id: u64,
    tracks: VecDeque<Track>,
    raw: RawMetrics,
    capacity: usize,
    buckets: usize,
}

fn key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

impl Simulation {
    /// `params` must be validated.
    pub fn new(params: &SystemParams, seed: u64) -> Self {
        let arena = Arena::from_params(params);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = (0..params.n_total)
            .map(|i| {
                let mut n = NodeState::new(i, params.model_count);
                n.kinematics = arena.spawn(&mut rng);
                n
            })
            .collect();
        let raw = RawMetrics {
            seed,
            slot_length: params.slot,
            model_count: params.model_count,
            obs_lifetime: params.obs_lifetime,
            age_bucket: params.metrics.age_bucket_s,
            samples: Vec::new(),
            traces: Vec::new(),
            invariants: InvariantCounters::default(),
        };
        let buckets = raw.bucket_count();
        Simulation {
            params: params.clone(),
            arena,
            rng,
            nodes,
            sessions: BTreeMap::new(),
            tracker: ContactTracker::new(),
            slot: 0,
            next_obs_id: 0,
            tracks: VecDeque::new(),
            raw,
            capacity: params.capacity(),
            buckets,
        }
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn sessions(&self) -> &BTreeMap<(u32, u32), ConnectionState> {
        &self.sessions
    }

    pub fn raw(&self) -> &RawMetrics {
        &self.raw
    }

    pub fn time(&self) -> f64 {
        self.slot as f64 * self.params.slot
    }

    pub fn finish(self) -> RawMetrics {
        self.raw
    }

    pub fn step(&mut self) {
        let dt = self.params.slot;
        let t = self.time();
        if self.slot > 0 {
            let mut kin: Vec<NodeKinematics> = self.nodes.iter().map(|n| n.kinematics).collect();
            step_mobility(&mut kin, &self.arena, dt, &mut self.rng);
            for (n, k) in self.nodes.iter_mut().zip(kin) {
                n.kinematics = k;
            }
        }
        self.zone_transitions();

        let mut sample = SlotSample {
            slot: self.slot,
            time: t,
            in_rz: 0,
            holders: vec![0; self.params.model_count as usize],
            subscribers: vec![0; self.params.model_count as usize],
            busy: 0,
            link_time: 0.0,
            computing: 0,
            merge_queue: 0,
            train_queue: 0,
            stored_obs: 0,
            staleness_sum: 0.0,
            instances: 0,
            merges_enqueued: 0,
            merges_skipped: 0,
            sessions_opened: 0,
            obs_generated: 0,
            obs_lost: 0,
        };

        let generated = generate_observations(
            t,
            &self.params,
            &mut self.rng,
            &mut self.nodes,
            &mut self.next_obs_id,
        );
        for (rec, recorders) in generated {
            sample.obs_generated += 1;
            if recorders.is_empty() {
                sample.obs_lost += 1;
                continue;
            }
            self.tracks.push_back(Track {
                obs_id: rec.obs_id,
                model_id: rec.model_id,
                gen_time: rec.gen_time,
                first_trained: None,
                sums: vec![0.0; self.buckets],
                counts: vec![0; self.buckets],
            });
        }

        self.connections(t, &mut sample);
        self.compute(t, t + dt);
        self.sample(t, &mut sample);
        self.raw.samples.push(sample);
        self.slot += 1;
    }

    fn zone_transitions(&mut self) {
        let m = self.params.model_count as usize;
        let w = self.params.subscription().m_eff as usize;
        for i in 0..self.nodes.len() {
            let now_in = self.arena.in_zone(&self.nodes[i].kinematics);
            match (self.nodes[i].in_rz, now_in) {
                (true, false) => {
                    if let Some(peer) = self.nodes[i].link {
                        self.sessions.remove(&key(i as u32, peer));
                        self.nodes[peer as usize].link = None;
                    }
                    self.nodes[i].purge();
                    self.nodes[i].in_rz = false;
                }
                (false, true) => {
                    let mut subs: Vec<u32> = index::sample(&mut self.rng, m, w)
                        .into_iter()
                        .map(|x| x as u32)
                        .collect();
                    subs.sort_unstable();
                    let n = &mut self.nodes[i];
                    n.subscriptions = subs;
                    n.in_rz = true;
                }
                _ => {}
            }
        }
    }

    fn connections(&mut self, t: f64, sample: &mut SlotSample) {
        let dt = self.params.slot;
        let lifetime = self.params.obs_lifetime;
        let inside: Vec<u32> = self
            .nodes
            .iter()
            .filter(|n| n.in_rz)
            .map(|n| n.id)
            .collect();
        let positions: Vec<(f64, f64)> = inside
            .iter()
            .map(|&i| {
                let k = &self.nodes[i as usize].kinematics;
                (k.x, k.y)
            })
            .collect();
        let mut pairs: Vec<(u32, u32)> = detect_contacts(&positions, self.params.tx_range)
            .into_iter()
            .map(|(a, b)| key(inside[a as usize], inside[b as usize]))
            .collect();
        pairs.sort_unstable();
        let mut ended = Vec::new();
        self.tracker
            .update(&pairs, self.slot, |_, _| true, &mut ended);

        // Sessions whose contact is gone lose the transfer in flight.
        let lost: Vec<(u32, u32)> = self
            .sessions
            .keys()
            .filter(|k| pairs.binary_search(k).is_err())
            .copied()
            .collect();
        for k in lost {
            self.sessions.remove(&k);
            self.nodes[k.0 as usize].link = None;
            self.nodes[k.1 as usize].link = None;
        }

        let mut released: BTreeSet<u32> = BTreeSet::new();
        let open: Vec<(u32, u32)> = self.sessions.keys().copied().collect();
        for k in open {
            self.run_session(k, t, dt, sample, &mut released);
        }

        let mut candidates: Vec<usize> = self
            .tracker
            .active()
            .iter()
            .enumerate()
            .filter(|(_, ep)| !ep.exchanged)
            .map(|(i, _)| i)
            .collect();
        candidates.shuffle(&mut self.rng);
        for idx in candidates {
            let (a, b) = self.tracker.active()[idx].pair;
            let free = |n: &NodeState| n.link.is_none() && !released.contains(&n.id);
            if !free(&self.nodes[a as usize]) || !free(&self.nodes[b as usize]) {
                continue;
            }
            let plan = plan_exchange(
                &self.nodes[a as usize],
                &self.nodes[b as usize],
                t,
                lifetime,
                &mut self.rng,
            );
            if plan.is_empty() {
                continue;
            }
            self.tracker.active_mut()[idx].exchanged = true;
            self.nodes[a as usize].link = Some(b);
            self.nodes[b as usize].link = Some(a);
            self.sessions.insert(
                (a, b),
                ConnectionState::new((a, b), plan, self.params.t0(), self.params.model_size),
            );
            sample.sessions_opened += 1;
            self.run_session((a, b), t, dt, sample, &mut released);
        }
    }

    /// Gives a session one slot of link time and applies its deliveries.
    fn run_session(
        &mut self,
        k: (u32, u32),
        t: f64,
        budget: f64,
        sample: &mut SlotSample,
        released: &mut BTreeSet<u32>,
    ) {
        let session = self.sessions.get_mut(&k).expect("open session");
        let (used, delivered) = session.advance(budget, t, self.params.channel_rate);
        let done = session.done();
        sample.link_time += 2.0 * used;
        for (tr, at) in delivered {
            self.deliver(tr, at, sample);
        }
        if done {
            self.sessions.remove(&k);
            self.nodes[k.0 as usize].link = None;
            self.nodes[k.1 as usize].link = None;
            released.insert(k.0);
            released.insert(k.1);
        }
    }

    fn deliver(&mut self, tr: Transfer, at: f64, sample: &mut SlotSample) {
        let lifetime = self.params.obs_lifetime;
        let Some(sent) = self.nodes[tr.from as usize].instance(tr.model_id).cloned() else {
            return;
        };
        let receiver = &mut self.nodes[tr.to as usize];
        let local = receiver.instance(tr.model_id);
        if sent.is_subset_at(local, at, lifetime) {
            sample.merges_skipped += 1;
            return;
        }
        // Independent containment check on id sets.
        let local_ids: BTreeSet<u64> = local
            .map(|l| {
                l.training_set
                    .iter()
                    .filter(|r| !r.expired(at, lifetime))
                    .map(|r| r.obs_id)
                    .collect()
            })
            .unwrap_or_default();
        if sent
            .training_set
            .iter()
            .filter(|r| !r.expired(at, lifetime))
            .all(|r| local_ids.contains(&r.obs_id))
        {
            self.raw.invariants.subset += 1;
        }
        receiver.merge_queue.push_back(sent);
        sample.merges_enqueued += 1;
    }

    fn compute(&mut self, start: f64, end: f64) {
        let t_merge = self.params.merge_time;
        let t_train = self.params.train_time;
        let lifetime = self.params.obs_lifetime;
        for i in 0..self.nodes.len() {
            if !self.nodes[i].in_rz {
                continue;
            }
            let mut cursor = start;
            loop {
                if self.nodes[i].current.is_some() {
                    let finish = self.nodes[i].compute_busy_until;
                    if finish > end + EPS {
                        break;
                    }
                    let task = self.nodes[i].current.take().unwrap();
                    self.complete(i, task, finish);
                    cursor = finish;
                }
                if cursor >= end - EPS {
                    break;
                }
                let node = &mut self.nodes[i];
                if let Some(inst) = node.merge_queue.pop_front() {
                    node.current = Some(Task::Merge(inst));
                    node.compute_busy_until = cursor + t_merge;
                } else if let Some(obs) = node.train_queue.pop_front() {
                    if obs.expired(cursor, lifetime) {
                        continue;
                    }
                    if !node.merge_queue.is_empty() {
                        self.raw.invariants.priority += 1;
                    }
                    node.current = Some(Task::Train(obs));
                    node.compute_busy_until = cursor + t_train;
                } else {
                    node.compute_busy_until = cursor;
                    break;
                }
            }
        }
    }

    fn complete(&mut self, i: usize, task: Task, at: f64) {
        let node = &mut self.nodes[i];
        match task {
            Task::Merge(received) => {
                let m = received.model_id as usize;
                let merged =
                    merge_instances(node.instances[m].as_ref(), &received, at, &self.params)
                        .expect("queued instances match their model");
                node.instances[m] = (!merged.is_empty()).then_some(merged);
            }
            Task::Train(obs) => {
                let m = obs.model_id as usize;
                let subscribed = node.subscribed(obs.model_id);
                let trained = train_instance(
                    node.instances[m].as_ref(),
                    &obs,
                    subscribed,
                    at,
                    &self.params,
                )
                .expect("recorders are subscribed");
                let included = trained.as_ref().is_some_and(|x| x.contains(obs.obs_id));
                node.instances[m] = trained;
                if included {
                    if let Some(tr) = self.track_mut(obs.obs_id) {
                        tr.first_trained.get_or_insert(at);
                    }
                }
            }
        }
    }

    fn track_mut(&mut self, obs_id: u64) -> Option<&mut Track> {
        let i = self
            .tracks
            .binary_search_by_key(&obs_id, |t| t.obs_id)
            .ok()?;
        self.tracks.get_mut(i)
    }

    fn sample(&mut self, t: f64, sample: &mut SlotSample) {
        let lifetime = self.params.obs_lifetime;
        // Retire observations past their lifetime.
        while self
            .tracks
            .front()
            .is_some_and(|tr| t - tr.gen_time > lifetime)
        {
            let tr = self.tracks.pop_front().unwrap();
            if let Some(first) = tr.first_trained {
                let buckets = tr
                    .sums
                    .iter()
                    .zip(&tr.counts)
                    .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
                    .collect();
                self.raw.traces.push(ObservationTrace {
                    obs_id: tr.obs_id,
                    model_id: tr.model_id,
                    gen_time: tr.gen_time,
                    first_trained: first,
                    buckets,
                });
            }
        }
        let base = self.tracks.front().map_or(0, |tr| tr.obs_id);
        let span = self
            .tracks
            .back()
            .map_or(0, |tr| (tr.obs_id - base + 1) as usize);
        let mut record_holders = vec![0u32; span];

        for n in &mut self.nodes {
            if !n.in_rz {
                if !n.subscriptions.is_empty()
                    || n.instances.iter().any(Option::is_some)
                    || !n.merge_queue.is_empty()
                    || !n.train_queue.is_empty()
                    || n.current.is_some()
                    || n.link.is_some()
                {
                    self.raw.invariants.purge += 1;
                }
                continue;
            }
            sample.in_rz += 1;
            for &m in &n.subscriptions {
                sample.subscribers[m as usize] += 1;
            }
            if n.link.is_some() {
                sample.busy += 1;
            }
            if n.current.is_some() {
                sample.computing += 1;
            }
            sample.merge_queue += n.merge_queue.len() as u32;
            sample.train_queue += n.train_queue.len() as u32;
            for (m, slot) in n.instances.iter_mut().enumerate() {
                let Some(inst) = slot else { continue };
                inst.enforce_limits(t, lifetime, usize::MAX);
                if inst.is_empty() {
                    *slot = None;
                    continue;
                }
                if inst.len() > self.capacity {
                    self.raw.invariants.containment += 1;
                }
                sample.holders[m] += 1;
                sample.instances += 1;
                sample.stored_obs += inst.len() as u64;
                let newest = inst.training_set.last().unwrap().gen_time;
                sample.staleness_sum += t - newest;
                for r in &inst.training_set {
                    if r.obs_id >= base {
                        if let Some(c) = record_holders.get_mut((r.obs_id - base) as usize) {
                            *c += 1;
                        }
                    }
                }
            }
        }

        let bucket_len = self.params.metrics.age_bucket_s;
        for tr in &mut self.tracks {
            let age = t - tr.gen_time;
            let b = ((age / bucket_len) as usize).min(self.buckets - 1);
            let holders = sample.holders[tr.model_id as usize];
            let frac = if holders > 0 {
                record_holders[(tr.obs_id - base) as usize] as f64 / holders as f64
            } else {
                0.0
            };
            tr.sums[b] += frac;
            tr.counts[b] += 1;
        }

        // Busy nodes must form disjoint linked pairs backed by a session.
        for n in &self.nodes {
            if let Some(p) = n.link {
                let back = self.nodes[p as usize].link == Some(n.id);
                if !back || p == n.id || !self.sessions.contains_key(&key(n.id, p)) {
                    self.raw.invariants.pairing += 1;
                }
            }
        }
        for k in self.sessions.keys() {
            if self.nodes[k.0 as usize].link != Some(k.1)
                || self.nodes[k.1 as usize].link != Some(k.0)
            {
                self.raw.invariants.pairing += 1;
            }
        }
    }
}

/// Runs one simulation for `duration_slots` slots.
pub fn run_simulation(params: &SystemParams, seed: u64, duration_slots: u64) -> RawMetrics {
    let mut sim = Simulation::new(params, seed);
    for _ in 0..duration_slots {
        sim.step();
    }
    sim.finish()
}

/// Independent replicate runs on the current rayon pool, in seed order.
pub fn run_batch(params: &SystemParams, seeds: &[u64], duration_slots: u64) -> Vec<RawMetrics> {
    seeds
        .par_iter()
        .map(|&s| run_simulation(params, s, duration_slots))
        .collect()
}
