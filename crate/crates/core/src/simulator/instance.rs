use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::SystemParams;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstanceError {
    #[error("cannot merge an instance of model {received} into model {local}")]
    ModelMismatch { local: u32, received: u32 },
    #[error("node is not subscribed to model {0}")]
    NotSubscribed(u32),
}

/// One observation. Ids grow with generation time, so the smallest id in a
/// training set is its oldest record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub obs_id: u64,
    pub model_id: u32,
    pub gen_time: f64,
}

impl ObservationRecord {
    pub fn expired(&self, now: f64, lifetime: f64) -> bool {
        now - self.gen_time > lifetime
    }
}

/// A non-default model instance, identified by its training set (kept
/// sorted by `obs_id` with no duplicates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInstance {
    pub model_id: u32,
    pub training_set: Vec<ObservationRecord>,
}

impl ModelInstance {
    pub fn new(model_id: u32, mut records: Vec<ObservationRecord>) -> Self {
        records.sort_by_key(|r| r.obs_id);
        records.dedup_by_key(|r| r.obs_id);
        ModelInstance {
            model_id,
            training_set: records,
        }
    }

    pub fn len(&self) -> usize {
        self.training_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.training_set.is_empty()
    }

    pub fn contains(&self, obs_id: u64) -> bool {
        self.training_set
            .binary_search_by_key(&obs_id, |r| r.obs_id)
            .is_ok()
    }

    /// Training-set inclusion, ignoring records expired at `now`.
    pub fn is_subset_at(&self, other: Option<&ModelInstance>, now: f64, lifetime: f64) -> bool {
        let mut theirs = other
            .map(|o| o.training_set.as_slice())
            .unwrap_or(&[])
            .iter()
            .filter(|r| !r.expired(now, lifetime))
            .peekable();
        for mine in self
            .training_set
            .iter()
            .filter(|r| !r.expired(now, lifetime))
        {
            loop {
                match theirs.peek() {
                    Some(t) if t.obs_id < mine.obs_id => {
                        theirs.next();
                    }
                    Some(t) if t.obs_id == mine.obs_id => {
                        theirs.next();
                        break;
                    }
                    _ => return false,
                }
            }
        }
        true
    }

    /// Drops expired records, then the oldest records beyond `capacity`.
    pub fn enforce_limits(&mut self, now: f64, lifetime: f64, capacity: usize) {
        self.training_set.retain(|r| !r.expired(now, lifetime));
        if self.training_set.len() > capacity {
            let excess = self.training_set.len() - capacity;
            self.training_set.drain(..excess);
        }
    }

    /// Youngest record's generation time.
    pub fn newest(&self) -> Option<f64> {
        self.training_set
            .iter()
            .map(|r| r.gen_time)
            .fold(None, |acc, t| Some(acc.map_or(t, |a: f64| a.max(t))))
    }
}

fn union(a: &[ObservationRecord], b: &[ObservationRecord]) -> Vec<ObservationRecord> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].obs_id.cmp(&b[j].obs_id) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Union of the two training sets under the expiry and capacity rules.
pub fn merge_instances(
    local: Option<&ModelInstance>,
    received: &ModelInstance,
    now: f64,
    params: &SystemParams,
) -> Result<ModelInstance, InstanceError> {
    let set = match local {
        Some(l) if l.model_id != received.model_id => {
            return Err(InstanceError::ModelMismatch {
                local: l.model_id,
                received: received.model_id,
            })
        }
        Some(l) => union(&l.training_set, &received.training_set),
        None => received.training_set.clone(),
    };
    let mut out = ModelInstance {
        model_id: received.model_id,
        training_set: set,
    };
    out.enforce_limits(now, params.obs_lifetime, params.capacity());
    Ok(out)
}

/// Adds one observation to the local instance (or to the default model,
/// creating the first instance). An expired observation leaves the local
/// state unchanged.
pub fn train_instance(
    local: Option<&ModelInstance>,
    obs: &ObservationRecord,
    subscribed: bool,
    now: f64,
    params: &SystemParams,
) -> Result<Option<ModelInstance>, InstanceError> {
    if !subscribed {
        return Err(InstanceError::NotSubscribed(obs.model_id));
    }
    if let Some(l) = local {
        if l.model_id != obs.model_id {
            return Err(InstanceError::ModelMismatch {
                local: l.model_id,
                received: obs.model_id,
            });
        }
    }
    if obs.expired(now, params.obs_lifetime) {
        return Ok(local.cloned());
    }
    let base = local.map(|l| l.training_set.as_slice()).unwrap_or(&[]);
    let mut out = ModelInstance {
        model_id: obs.model_id,
        training_set: union(base, std::slice::from_ref(obs)),
    };
    out.enforce_limits(now, params.obs_lifetime, params.capacity());
    Ok(Some(out))
}
