use std::io::Write;

use serde::{Deserialize, Serialize};

/// State of the population at the end of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSample {
    pub slot: u64,
    pub time: f64,
    pub in_rz: u32,
    /// In-zone nodes holding a non-default instance, per model.
    pub holders: Vec<u32>,
    /// In-zone nodes subscribed to each model.
    pub subscribers: Vec<u32>,
    /// Nodes with an open session at sampling time.
    pub busy: u32,
    /// Link time used this slot, summed over nodes (seconds).
    pub link_time: f64,
    /// Nodes serving a compute task.
    pub computing: u32,
    pub merge_queue: u32,
    pub train_queue: u32,
    /// Unexpired records over all in-zone instances.
    pub stored_obs: u64,
    /// Sum over instances of the age of their newest record.
    pub staleness_sum: f64,
    pub instances: u32,
    pub merges_enqueued: u32,
    pub merges_skipped: u32,
    pub sessions_opened: u32,
    pub obs_generated: u32,
    pub obs_lost: u32,
}

/// Mean holder fraction of one observation, per age bucket, over its whole
/// lifetime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationTrace {
    pub obs_id: u64,
    pub model_id: u32,
    pub gen_time: f64,
    /// First completed training that included it.
    pub first_trained: f64,
    /// Per bucket: mean over the bucket's slots of
    /// (in-zone holders of the record) / (in-zone holders of the model).
    pub buckets: Vec<f64>,
}

/// Counts of invariant violations observed while running.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantCounters {
    /// Training started while merges were queued.
    pub priority: u64,
    /// Merge enqueued whose set was contained in the local set.
    pub subset: u64,
    /// Busy nodes not forming disjoint linked pairs.
    pub pairing: u64,
    /// Out-of-zone nodes holding instances, tasks or links.
    pub purge: u64,
    /// Training sets over capacity or holding expired records.
    pub containment: u64,
}

impl InvariantCounters {
    pub fn total(&self) -> u64 {
        self.priority + self.subset + self.pairing + self.purge + self.containment
    }
}

/// Everything recorded by one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMetrics {
    pub seed: u64,
    pub slot_length: f64,
    pub model_count: u32,
    pub obs_lifetime: f64,
    pub age_bucket: f64,
    pub samples: Vec<SlotSample>,
    pub traces: Vec<ObservationTrace>,
    pub invariants: InvariantCounters,
}

impl RawMetrics {
    pub fn bucket_count(&self) -> usize {
        (self.obs_lifetime / self.age_bucket).ceil() as usize
    }

    /// Per-slot series: one row per slot, per-model columns `holders_<m>`.
    pub fn write_slots_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["slot", "time", "in_rz"].map(String::from).to_vec();
        header.extend((0..self.model_count).map(|m| format!("holders_{m}")));
        header.extend(
            [
                "busy",
                "link_time",
                "computing",
                "merge_queue",
                "train_queue",
                "stored_obs",
                "staleness_sum",
                "instances",
                "merges_enqueued",
                "merges_skipped",
                "sessions_opened",
                "obs_generated",
                "obs_lost",
            ]
            .map(String::from),
        );
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.slot.to_string(), s.time.to_string(), s.in_rz.to_string()];
            row.extend(s.holders.iter().map(u32::to_string));
            row.extend([
                s.busy.to_string(),
                s.link_time.to_string(),
                s.computing.to_string(),
                s.merge_queue.to_string(),
                s.train_queue.to_string(),
                s.stored_obs.to_string(),
                s.staleness_sum.to_string(),
                s.instances.to_string(),
                s.merges_enqueued.to_string(),
                s.merges_skipped.to_string(),
                s.sessions_opened.to_string(),
                s.obs_generated.to_string(),
                s.obs_lost.to_string(),
            ]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-observation holder fractions: one row per trained observation,
    /// columns `age_<lower bound>` per bucket.
    pub fn write_observations_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["obs_id", "model_id", "gen_time", "first_trained"]
            .map(String::from)
            .to_vec();
        header.extend(
            (0..self.bucket_count()).map(|b| format!("age_{}", b as f64 * self.age_bucket)),
        );
        w.write_record(&header)?;
        for t in &self.traces {
            let mut row = vec![
                t.obs_id.to_string(),
                t.model_id.to_string(),
                t.gen_time.to_string(),
                t.first_trained.to_string(),
            ];
            row.extend(t.buckets.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
