//! Random Direction mobility with reflecting walls, replication-zone
//! membership, contact detection and contact-model calibration.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::SystemParams;

#[derive(Debug, Error)]
pub enum MobilityError {
    #[error("only {observed} contacts observed, at least {required} are needed")]
    InsufficientSamples { observed: usize, required: usize },
    #[error("calibration duration {duration} s is shorter than 10 mean sojourns ({minimum} s)")]
    DurationTooShort { duration: f64, minimum: f64 },
    #[error("invalid contact model: {0}")]
    InvalidContactModel(String),
    #[error("contact model I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("contact model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Minimum number of contacts a calibration must observe.
pub const MIN_CALIBRATION_CONTACTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeKinematics {
    pub x: f64,
    pub y: f64,
    /// Radians, counter-clockwise from the x axis.
    pub heading: f64,
    pub epoch_remaining: f64,
}

/// Static description of the arena the nodes move in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arena {
    pub side: f64,
    pub speed: f64,
    pub epoch_mean: f64,
    pub rz_radius: f64,
}

impl Arena {
    pub fn from_params(params: &SystemParams) -> Self {
        Arena {
            side: params.area_side,
            speed: params.speed,
            epoch_mean: params.mobility.epoch_mean_s,
            rz_radius: params.rz_radius,
        }
    }

    pub fn in_zone(&self, node: &NodeKinematics) -> bool {
        let c = self.side / 2.0;
        let (dx, dy) = (node.x - c, node.y - c);
        dx * dx + dy * dy <= self.rz_radius * self.rz_radius
    }

    /// Uniform position, uniform heading, exponential residual epoch.
    pub fn spawn<R: Rng + ?Sized>(&self, rng: &mut R) -> NodeKinematics {
        let epoch = Exp::new(1.0 / self.epoch_mean).expect("epoch mean > 0");
        NodeKinematics {
            x: rng.gen::<f64>() * self.side,
            y: rng.gen::<f64>() * self.side,
            heading: rng.gen::<f64>() * 2.0 * PI,
            epoch_remaining: epoch.sample(rng),
        }
    }
}

fn reflect(coord: &mut f64, side: f64) -> bool {
    let mut flipped = false;
    loop {
        if *coord < 0.0 {
            *coord = -*coord;
        } else if *coord > side {
            *coord = 2.0 * side - *coord;
        } else {
            return flipped;
        }
        flipped = !flipped;
    }
}

/// Advances every node by `dt`.
pub fn step_mobility<R: Rng + ?Sized>(
    nodes: &mut [NodeKinematics],
    arena: &Arena,
    dt: f64,
    rng: &mut R,
) {
    let epoch = Exp::new(1.0 / arena.epoch_mean).expect("epoch mean > 0");
    let step = arena.speed * dt;
    for node in nodes.iter_mut() {
        let (sin, cos) = node.heading.sin_cos();
        node.x += step * cos;
        node.y += step * sin;
        let mut vx = cos;
        let mut vy = sin;
        if reflect(&mut node.x, arena.side) {
            vx = -vx;
        }
        if reflect(&mut node.y, arena.side) {
            vy = -vy;
        }
        node.heading = vy.atan2(vx);
        node.epoch_remaining -= dt;
        if node.epoch_remaining <= 0.0 {
            node.heading = rng.gen::<f64>() * 2.0 * PI;
            node.epoch_remaining = epoch.sample(rng);
        }
    }
}

/// Unordered pairs within `tx_range` (inclusive), sorted by `(i, j)` with `i < j`.
pub fn detect_contacts(positions: &[(f64, f64)], tx_range: f64) -> Vec<(u32, u32)> {
    let mut pairs = Vec::new();
    if positions.len() < 2 {
        return pairs;
    }
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in positions {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    let cell = tx_range.max(f64::MIN_POSITIVE);
    let cols = (((max_x - min_x) / cell).floor() as usize + 1).min(4096);
    let rows = (((max_y - min_y) / cell).floor() as usize + 1).min(4096);
    let cell_of = |x: f64, y: f64| {
        let cx = (((x - min_x) / cell) as usize).min(cols - 1);
        let cy = (((y - min_y) / cell) as usize).min(rows - 1);
        (cx, cy)
    };
    // Counting sort of node indices into grid cells.
    let mut starts = vec![0usize; cols * rows + 1];
    for &(x, y) in positions {
        let (cx, cy) = cell_of(x, y);
        starts[cy * cols + cx + 1] += 1;
    }
    for k in 1..starts.len() {
        starts[k] += starts[k - 1];
    }
    let mut fill = starts.clone();
    let mut members = vec![0u32; positions.len()];
    for (i, &(x, y)) in positions.iter().enumerate() {
        let (cx, cy) = cell_of(x, y);
        let slot = &mut fill[cy * cols + cx];
        members[*slot] = i as u32;
        *slot += 1;
    }
    let r2 = tx_range * tx_range;
    for (i, &(x, y)) in positions.iter().enumerate() {
        let (cx, cy) = cell_of(x, y);
        for ny in cy.saturating_sub(1)..=(cy + 1).min(rows - 1) {
            for nx in cx.saturating_sub(1)..=(cx + 1).min(cols - 1) {
                let c = ny * cols + nx;
                for &j in &members[starts[c]..starts[c + 1]] {
                    if (j as usize) <= i {
                        continue;
                    }
                    let (xj, yj) = positions[j as usize];
                    let (dx, dy) = (x - xj, y - yj);
                    if dx * dx + dy * dy <= r2 {
                        pairs.push((i as u32, j));
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// One uninterrupted period in which two nodes are within range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContactEpisode {
    pub pair: (u32, u32),
    pub start_slot: u64,
    /// Both nodes were inside the zone when the contact began.
    pub started_in_zone: bool,
    /// Already in progress when tracking began; the start is unknown.
    pub censored: bool,
    /// An exchange session was opened during this contact.
    pub exchanged: bool,
}

/// Tracks contact episodes across slots from sorted pair lists.
#[derive(Debug, Clone, Default)]
pub struct ContactTracker {
    active: Vec<ContactEpisode>,
    first_slot: Option<u64>,
}

impl ContactTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Episodes currently in progress, sorted by pair.
    pub fn active(&self) -> &[ContactEpisode] {
        &self.active
    }

    pub fn active_mut(&mut self) -> &mut [ContactEpisode] {
        &mut self.active
    }

    /// Merges this slot's sorted contact list into the episode set. Episodes
    /// that are no longer in range are appended to `ended`; the duration of
    /// an ended episode is `slot - start_slot` slots.
    pub fn update(
        &mut self,
        pairs: &[(u32, u32)],
        slot: u64,
        mut both_in_zone: impl FnMut(u32, u32) -> bool,
        ended: &mut Vec<ContactEpisode>,
    ) {
        let first = *self.first_slot.get_or_insert(slot);
        let previous = std::mem::take(&mut self.active);
        let mut next = Vec::with_capacity(pairs.len());
        let mut old = previous.into_iter().peekable();
        for &pair in pairs {
            while let Some(ep) = old.peek() {
                if ep.pair < pair {
                    ended.push(old.next().unwrap());
                } else {
                    break;
                }
            }
            match old.peek() {
                Some(ep) if ep.pair == pair => next.push(old.next().unwrap()),
                _ => next.push(ContactEpisode {
                    pair,
                    start_slot: slot,
                    started_in_zone: both_in_zone(pair.0, pair.1),
                    censored: slot == first,
                    exchanged: false,
                }),
            }
        }
        ended.extend(old);
        self.active = next;
    }

    pub fn clear(&mut self) {
        self.active.clear();
        self.first_slot = None;
    }
}

/// Histogram bin of contact durations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationBin {
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
}

impl DurationBin {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Contact statistics consumed by the analytic engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactModel {
    /// Per-node contact rate `g` while inside the zone (1/s).
    pub mean_contact_rate: f64,
    pub duration_hist: Vec<DurationBin>,
    pub mean_duration: f64,
    pub t_star: f64,
    pub alpha: f64,
    pub mean_nodes_in_rz: f64,
    #[serde(default)]
    pub contacts_observed: u64,
    #[serde(default)]
    pub source: String,
}

impl ContactModel {
    /// Single-bin model with all mass at `duration`.
    pub fn degenerate(duration: f64, contact_rate: f64, t_star: f64, mean_nodes: f64) -> Self {
        ContactModel {
            mean_contact_rate: contact_rate,
            duration_hist: vec![DurationBin {
                lower: duration,
                upper: duration,
                mass: 1.0,
            }],
            mean_duration: duration,
            t_star,
            alpha: mean_nodes / t_star,
            mean_nodes_in_rz: mean_nodes,
            contacts_observed: 0,
            source: "degenerate".into(),
        }
    }

    /// Exponential duration law with the given mean, discretised into bins of
    /// width `bin_width` up to 30 means; the tail goes to the last bin and
    /// `mean_duration` is the mean of the discretised law.
    pub fn exponential(
        mean_duration: f64,
        contact_rate: f64,
        t_star: f64,
        alpha: f64,
        mean_nodes: f64,
        bin_width: f64,
    ) -> Self {
        let bins = ((30.0 * mean_duration / bin_width).ceil() as usize).max(1);
        let cdf = |t: f64| 1.0 - (-t / mean_duration).exp();
        let mut hist: Vec<DurationBin> = (0..bins)
            .map(|k| {
                let lower = k as f64 * bin_width;
                let upper = lower + bin_width;
                DurationBin {
                    lower,
                    upper,
                    mass: cdf(upper) - cdf(lower),
                }
            })
            .collect();
        let covered: f64 = hist.iter().map(|b| b.mass).sum();
        hist.last_mut().unwrap().mass += 1.0 - covered;
        let mean = hist.iter().map(|b| b.mass * b.midpoint()).sum();
        ContactModel {
            mean_contact_rate: contact_rate,
            duration_hist: hist,
            mean_duration: mean,
            t_star,
            alpha,
            mean_nodes_in_rz: mean_nodes,
            contacts_observed: 0,
            source: "exponential".into(),
        }
    }

    /// Exponential fallback for runs without calibration. Occupancy, entry
    /// rate and sojourn come from the validated parameters. The contact rate
    /// (unless configured) and mean duration follow straight-line kinematics
    /// at uniform density: relative speed `4v/π`, cross-section `2R`, mean
    /// chord `πR/2`.
    pub fn kinematic_fallback(params: &SystemParams) -> Self {
        let density = params.n_total as f64 / params.area_side.powi(2);
        let rel_speed = 4.0 * params.speed / PI;
        let g = params
            .contact_rate
            .unwrap_or(2.0 * params.tx_range * density * rel_speed);
        let mean_duration = PI * params.tx_range / 2.0 / rel_speed;
        Self::exponential(
            mean_duration,
            g,
            params.sojourn(),
            params.entry_rate(),
            params.mean_nodes(),
            params.slot,
        )
    }

    pub fn histogram_mean(&self) -> f64 {
        self.duration_hist
            .iter()
            .map(|b| b.mass * b.midpoint())
            .sum()
    }

    pub fn validate(&self) -> Result<(), MobilityError> {
        let bad = |msg: String| Err(MobilityError::InvalidContactModel(msg));
        if self.duration_hist.is_empty() {
            return bad("empty duration histogram".into());
        }
        if self
            .duration_hist
            .iter()
            .any(|b| b.mass.is_nan() || b.mass < 0.0 || b.upper < b.lower)
        {
            return bad("histogram bins must have non-negative mass and lower <= upper".into());
        }
        let total: f64 = self.duration_hist.iter().map(|b| b.mass).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("histogram mass sums to {total}"));
        }
        let mean = self.histogram_mean();
        if (mean - self.mean_duration).abs() > 1e-6 {
            return bad(format!(
                "mean_duration {} differs from histogram mean {mean}",
                self.mean_duration
            ));
        }
        for (name, v) in [
            ("mean_contact_rate", self.mean_contact_rate),
            ("t_star", self.t_star),
            ("alpha", self.alpha),
            ("mean_nodes_in_rz", self.mean_nodes_in_rz),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if self.t_star <= 0.0 || self.mean_nodes_in_rz <= 0.0 {
            return bad("t_star and mean_nodes_in_rz must be positive".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MobilityError> {
        let cm: ContactModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cm.validate()?;
        Ok(cm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MobilityError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Parameters with occupancy, entry rate, sojourn and contact rate
    /// replaced by this model's values.
    pub fn apply_to(
        &self,
        params: &SystemParams,
    ) -> Result<SystemParams, crate::params::ParamError> {
        params.with_calibration(
            self.mean_nodes_in_rz,
            self.alpha,
            self.t_star,
            self.mean_contact_rate,
        )
    }
}

/// Runs mobility alone for `duration` seconds and measures the contact model.
pub fn calibrate_contact_model(
    params: &SystemParams,
    duration: f64,
    seed: u64,
) -> Result<ContactModel, MobilityError> {
    let geo = crate::params::derive_geometry(params);
    if duration < 10.0 * geo.t_star {
        return Err(MobilityError::DurationTooShort {
            duration,
            minimum: 10.0 * geo.t_star,
        });
    }
    let arena = Arena::from_params(params);
    let dt = params.slot;
    let slots = (duration / dt).round() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<NodeKinematics> =
        (0..params.n_total).map(|_| arena.spawn(&mut rng)).collect();
    let mut inside: Vec<bool> = nodes.iter().map(|n| arena.in_zone(n)).collect();
    // Entry slot of the current visit; `None` for visits already in progress at start.
    let mut entered: Vec<Option<u64>> = vec![None; nodes.len()];
    let mut tracker = ContactTracker::new();
    let mut ended = Vec::new();
    let mut positions = Vec::with_capacity(nodes.len());
    let mut duration_counts: Vec<u64> = Vec::new();
    let mut started_contacts = 0u64;
    let mut zone_node_slots = 0u64;
    let mut entries = 0u64;
    let mut sojourn_sum = 0.0;
    let mut sojourn_n = 0u64;

    for slot in 0..slots {
        if slot > 0 {
            step_mobility(&mut nodes, &arena, dt, &mut rng);
            for (i, node) in nodes.iter().enumerate() {
                let now_in = arena.in_zone(node);
                match (inside[i], now_in) {
                    (false, true) => {
                        entries += 1;
                        entered[i] = Some(slot);
                    }
                    (true, false) => {
                        if let Some(start) = entered[i].take() {
                            sojourn_sum += (slot - start) as f64 * dt;
                            sojourn_n += 1;
                        }
                    }
                    _ => {}
                }
                inside[i] = now_in;
            }
        }
        zone_node_slots += inside.iter().filter(|&&b| b).count() as u64;
        positions.clear();
        positions.extend(nodes.iter().map(|n| (n.x, n.y)));
        let pairs = detect_contacts(&positions, params.tx_range);
        ended.clear();
        tracker.update(
            &pairs,
            slot,
            |i, j| inside[i as usize] && inside[j as usize],
            &mut ended,
        );
        for ep in tracker.active() {
            if ep.start_slot == slot && ep.started_in_zone && !ep.censored {
                started_contacts += 1;
            }
        }
        for ep in &ended {
            if ep.started_in_zone && !ep.censored {
                let k = (slot - ep.start_slot) as usize;
                if duration_counts.len() <= k {
                    duration_counts.resize(k + 1, 0);
                }
                duration_counts[k] += 1;
            }
        }
    }

    let observed: u64 = duration_counts.iter().sum();
    if (observed as usize) < MIN_CALIBRATION_CONTACTS {
        return Err(MobilityError::InsufficientSamples {
            observed: observed as usize,
            required: MIN_CALIBRATION_CONTACTS,
        });
    }
    let duration_hist: Vec<DurationBin> = duration_counts
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &count)| DurationBin {
            lower: (k as f64 - 0.5) * dt,
            upper: (k as f64 + 0.5) * dt,
            mass: count as f64 / observed as f64,
        })
        .collect();
    let zone_time = zone_node_slots as f64 * dt;
    let elapsed = slots as f64 * dt;
    let mut cm = ContactModel {
        mean_contact_rate: 2.0 * started_contacts as f64 / zone_time,
        duration_hist,
        mean_duration: 0.0,
        t_star: if sojourn_n > 0 {
            sojourn_sum / sojourn_n as f64
        } else {
            geo.t_star
        },
        alpha: entries as f64 / elapsed,
        mean_nodes_in_rz: zone_node_slots as f64 / slots as f64,
        contacts_observed: observed,
        source: "calibrated".into(),
    };
    cm.mean_duration = cm.histogram_mean();
    cm.validate()?;
    Ok(cm)
}
