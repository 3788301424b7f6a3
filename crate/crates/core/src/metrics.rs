//! Estimators over recorded simulation runs, and cross-run aggregation.
//!
//! All per-run estimators discard the first `warmup_fraction` of the slots.
//!
//! `metrics.csv` (one run) and `aggregate.csv` (several runs) share the
//! long format `metric,value,ci95,runs`; `ci95` is empty for a single run.
//! Scalar metric names are `a_hat`, `a_hat_model_<m>`, `busy_hat`,
//! `stored_info_hat`, `staleness_hat`, `merge_rate_hat`; curve points are
//! `o_curve_<bucket start in seconds>`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::simulator::{RawMetrics, SlotSample};

/// Fewest tracked observations the availability curve is estimated from.
pub const MIN_TRACKED_OBSERVATIONS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no post-warmup slot with nodes in the zone")]
    EmptyWindow,
    #[error("only {found} tracked observations after warmup, need {required}")]
    TooFewObservations { found: usize, required: usize },
    #[error("no instance present after warmup")]
    NoInstances,
    #[error("aggregation needs at least 2 runs, got {0}")]
    InsufficientRuns(usize),
    #[error("runs disagree on {0}")]
    Incompatible(&'static str),
}

/// Slots after the warmup cut.
pub fn post_warmup(raw: &RawMetrics, warmup_fraction: f64) -> &[SlotSample] {
    let skip = (raw.samples.len() as f64 * warmup_fraction).floor() as usize;
    &raw.samples[skip.min(raw.samples.len())..]
}

fn warmup_time(raw: &RawMetrics, warmup_fraction: f64) -> f64 {
    raw.samples.len() as f64 * warmup_fraction * raw.slot_length
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Per-model availability among subscribers in the zone, time-averaged.
pub fn availability_per_model(
    raw: &RawMetrics,
    warmup_fraction: f64,
) -> Result<Vec<f64>, MetricsError> {
    let window = post_warmup(raw, warmup_fraction);
    (0..raw.model_count as usize)
        .map(|m| {
            mean(
                window
                    .iter()
                    .filter(|s| s.subscribers[m] > 0)
                    .map(|s| s.holders[m] as f64 / s.subscribers[m] as f64),
            )
            .ok_or(MetricsError::EmptyWindow)
        })
        .collect()
}

/// `(a_hat, busy_hat)`: availability averaged over models, and the fraction
/// of in-zone node time spent on a link.
pub fn availability_series(
    raw: &RawMetrics,
    warmup_fraction: f64,
) -> Result<(f64, f64), MetricsError> {
    let per_model = availability_per_model(raw, warmup_fraction)?;
    let a_hat = per_model.iter().sum::<f64>() / per_model.len() as f64;
    let window = post_warmup(raw, warmup_fraction);
    let busy = mean(
        window
            .iter()
            .filter(|s| s.in_rz > 0)
            .map(|s| s.link_time / (s.in_rz as f64 * raw.slot_length)),
    )
    .ok_or(MetricsError::EmptyWindow)?;
    Ok((a_hat, busy))
}

/// Mean holder fraction per age bucket over observations generated after
/// the warmup (whose whole lifetime was therefore observed). Returns the
/// curve and the number of observations behind it.
pub fn observation_availability_curve(
    raw: &RawMetrics,
    warmup_fraction: f64,
) -> Result<(Vec<f64>, usize), MetricsError> {
    let start = warmup_time(raw, warmup_fraction);
    let mut curve = vec![0.0; raw.bucket_count()];
    let mut n = 0usize;
    for tr in raw.traces.iter().filter(|t| t.gen_time >= start) {
        for (c, v) in curve.iter_mut().zip(&tr.buckets) {
            *c += v;
        }
        n += 1;
    }
    if n < MIN_TRACKED_OBSERVATIONS {
        return Err(MetricsError::TooFewObservations {
            found: n,
            required: MIN_TRACKED_OBSERVATIONS,
        });
    }
    curve.iter_mut().for_each(|c| *c /= n as f64);
    Ok((curve, n))
}

/// Mean age of the newest record per instance, averaged over instances
/// within a slot and then over slots.
pub fn staleness_estimate(raw: &RawMetrics, warmup_fraction: f64) -> Result<f64, MetricsError> {
    mean(
        post_warmup(raw, warmup_fraction)
            .iter()
            .filter(|s| s.instances > 0)
            .map(|s| s.staleness_sum / s.instances as f64),
    )
    .ok_or(MetricsError::NoInstances)
}

/// Mean unexpired records held per in-zone node, over all its instances.
pub fn stored_information(raw: &RawMetrics, warmup_fraction: f64) -> Result<f64, MetricsError> {
    mean(
        post_warmup(raw, warmup_fraction)
            .iter()
            .filter(|s| s.in_rz > 0)
            .map(|s| s.stored_obs as f64 / s.in_rz as f64),
    )
    .ok_or(MetricsError::EmptyWindow)
}

/// Merge tasks enqueued per in-zone node per second.
pub fn merge_rate(raw: &RawMetrics, warmup_fraction: f64) -> Result<f64, MetricsError> {
    let window = post_warmup(raw, warmup_fraction);
    let merges: f64 = window.iter().map(|s| s.merges_enqueued as f64).sum();
    let node_time: f64 = window
        .iter()
        .map(|s| s.in_rz as f64 * raw.slot_length)
        .sum();
    if node_time <= 0.0 {
        return Err(MetricsError::EmptyWindow);
    }
    Ok(merges / node_time)
}

/// 95% half-widths; `None` for a single run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ci95 {
    pub a_hat: Option<f64>,
    pub a_per_model: Vec<Option<f64>>,
    pub busy_hat: Option<f64>,
    pub o_curve: Vec<Option<f64>>,
    pub stored_info_hat: Option<f64>,
    pub staleness_hat: Option<f64>,
    pub merge_rate_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: usize,
    pub a_hat: f64,
    pub a_per_model: Vec<f64>,
    pub busy_hat: f64,
    /// Age-bucket lower bounds (seconds) of `o_curve`.
    pub o_ages: Vec<f64>,
    /// Empty when too few observations were tracked.
    pub o_curve: Vec<f64>,
    pub tracked_observations: usize,
    pub stored_info_hat: f64,
    pub staleness_hat: Option<f64>,
    pub merge_rate_hat: f64,
    pub ci95: Ci95,
    pub diagnostics: Vec<String>,
}

/// Every estimator for one run. A missing curve or staleness value is noted
/// in `diagnostics` rather than failing the report.
pub fn summarize(raw: &RawMetrics, warmup_fraction: f64) -> Result<MetricsReport, MetricsError> {
    let a_per_model = availability_per_model(raw, warmup_fraction)?;
    let (a_hat, busy_hat) = availability_series(raw, warmup_fraction)?;
    let mut diagnostics = Vec::new();
    let (o_curve, tracked) = match observation_availability_curve(raw, warmup_fraction) {
        Ok(c) => c,
        Err(e) => {
            diagnostics.push(e.to_string());
            (Vec::new(), 0)
        }
    };
    let staleness_hat = match staleness_estimate(raw, warmup_fraction) {
        Ok(s) => Some(s),
        Err(e) => {
            diagnostics.push(e.to_string());
            None
        }
    };
    Ok(MetricsReport {
        runs: 1,
        a_hat,
        a_per_model,
        busy_hat,
        o_ages: (0..raw.bucket_count())
            .map(|b| b as f64 * raw.age_bucket)
            .collect(),
        o_curve,
        tracked_observations: tracked,
        stored_info_hat: stored_information(raw, warmup_fraction)?,
        staleness_hat,
        merge_rate_hat: merge_rate(raw, warmup_fraction)?,
        ci95: Ci95 {
            a_per_model: vec![None; raw.model_count as usize],
            o_curve: Vec::new(),
            ..Ci95::default()
        },
        diagnostics,
    })
}

/// Mean and Student-t 95% half-width. Values are sorted first, so the
/// result does not depend on run order.
pub fn mean_ci(values: &[f64]) -> (f64, Option<f64>) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, None);
    }
    let mut dev: Vec<f64> = v.iter().map(|x| (x - m).powi(2)).collect();
    dev.sort_by(f64::total_cmp);
    let var = dev.iter().sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("df >= 1")
        .inverse_cdf(0.975);
    (m, Some(t * (var / n).sqrt()))
}

/// Cross-run means with 95% half-widths. The curve is aggregated over the
/// runs that produced one; staleness over the runs that measured it.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<MetricsReport, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::InsufficientRuns(reports.len()));
    }
    let models = reports[0].a_per_model.len();
    if reports.iter().any(|r| r.a_per_model.len() != models) {
        return Err(MetricsError::Incompatible("model count"));
    }
    let field = |f: &dyn Fn(&MetricsReport) -> f64| -> (f64, Option<f64>) {
        mean_ci(&reports.iter().map(f).collect::<Vec<_>>())
    };
    let (a_hat, a_ci) = field(&|r| r.a_hat);
    let (busy_hat, busy_ci) = field(&|r| r.busy_hat);
    let (stored, stored_ci) = field(&|r| r.stored_info_hat);
    let (merge, merge_ci) = field(&|r| r.merge_rate_hat);
    let per_model: Vec<(f64, Option<f64>)> =
        (0..models).map(|m| field(&|r| r.a_per_model[m])).collect();

    let stale: Vec<f64> = reports.iter().filter_map(|r| r.staleness_hat).collect();
    let (staleness_hat, stale_ci) = if stale.is_empty() {
        (None, None)
    } else {
        let (m, ci) = mean_ci(&stale);
        (Some(m), ci)
    };

    let with_curve: Vec<&MetricsReport> =
        reports.iter().filter(|r| !r.o_curve.is_empty()).collect();
    let buckets = with_curve.first().map_or(0, |r| r.o_curve.len());
    let curve: Vec<(f64, Option<f64>)> = (0..buckets)
        .map(|b| mean_ci(&with_curve.iter().map(|r| r.o_curve[b]).collect::<Vec<_>>()))
        .collect();
    let mut diagnostics = Vec::new();
    if with_curve.len() < reports.len() {
        diagnostics.push(format!(
            "observation curve from {} of {} runs",
            with_curve.len(),
            reports.len()
        ));
    }

    Ok(MetricsReport {
        runs: reports.len(),
        a_hat,
        a_per_model: per_model.iter().map(|x| x.0).collect(),
        busy_hat,
        o_ages: reports[0].o_ages.clone(),
        o_curve: curve.iter().map(|x| x.0).collect(),
        tracked_observations: reports.iter().map(|r| r.tracked_observations).sum(),
        stored_info_hat: stored,
        staleness_hat,
        merge_rate_hat: merge,
        ci95: Ci95 {
            a_hat: a_ci,
            a_per_model: per_model.iter().map(|x| x.1).collect(),
            busy_hat: busy_ci,
            o_curve: curve.iter().map(|x| x.1).collect(),
            stored_info_hat: stored_ci,
            staleness_hat: stale_ci,
            merge_rate_hat: merge_ci,
        },
        diagnostics,
    })
}

impl MetricsReport {
    /// `(metric, value, ci95)` rows in a fixed order.
    pub fn rows(&self) -> Vec<(String, f64, Option<f64>)> {
        let ci = &self.ci95;
        let mut rows = vec![("a_hat".to_string(), self.a_hat, ci.a_hat)];
        for (m, &a) in self.a_per_model.iter().enumerate() {
            rows.push((
                format!("a_hat_model_{m}"),
                a,
                ci.a_per_model.get(m).copied().flatten(),
            ));
        }
        rows.push(("busy_hat".into(), self.busy_hat, ci.busy_hat));
        rows.push((
            "stored_info_hat".into(),
            self.stored_info_hat,
            ci.stored_info_hat,
        ));
        if let Some(s) = self.staleness_hat {
            rows.push(("staleness_hat".into(), s, ci.staleness_hat));
        }
        rows.push((
            "merge_rate_hat".into(),
            self.merge_rate_hat,
            ci.merge_rate_hat,
        ));
        for (b, &o) in self.o_curve.iter().enumerate() {
            rows.push((
                format!("o_curve_{}", self.o_ages[b]),
                o,
                ci.o_curve.get(b).copied().flatten(),
            ));
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value", "ci95", "runs"])?;
        for (name, v, ci) in self.rows() {
            w.write_record([
                name,
                v.to_string(),
                ci.map(|c| c.to_string()).unwrap_or_default(),
                self.runs.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `∫ o dτ` of the estimated curve (bucket-width rectangles).
    pub fn curve_integral(&self, bucket_width: f64) -> Option<f64> {
        (!self.o_curve.is_empty()).then(|| self.o_curve.iter().sum::<f64>() * bucket_width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{InvariantCounters, ObservationTrace};

    fn sample(slot: u64, in_rz: u32, holders: u32) -> SlotSample {
        SlotSample {
            slot,
            time: slot as f64 * 0.5,
            in_rz,
            holders: vec![holders],
            subscribers: vec![in_rz],
            busy: 0,
            link_time: 0.25 * in_rz as f64,
            computing: 0,
            merge_queue: 0,
            train_queue: 0,
            stored_obs: 3 * in_rz as u64,
            staleness_sum: 7.0 * holders as f64,
            instances: holders,
            merges_enqueued: in_rz / 10,
            merges_skipped: 0,
            sessions_opened: 0,
            obs_generated: 0,
            obs_lost: 0,
        }
    }

    /// Synthetic run with known constants.
    fn synthetic(slots: u64, holders: u32) -> RawMetrics {
        let traces = (0..200)
            .map(|i| ObservationTrace {
                obs_id: i,
                model_id: 0,
                gen_time: slots as f64 * 0.5 * 0.5 + i as f64 * 0.01,
                first_trained: 0.0,
                buckets: vec![0.25; 60],
            })
            .collect();
        RawMetrics {
            seed: 0,
            slot_length: 0.5,
            model_count: 1,
            obs_lifetime: 300.0,
            age_bucket: 5.0,
            samples: (0..slots).map(|s| sample(s, 100, holders)).collect(),
            traces,
            invariants: InvariantCounters::default(),
        }
    }

    #[test]
    fn estimators_recover_constants() {
        let raw = synthetic(1000, 80);
        let r = summarize(&raw, 0.3).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() < 1e-12;
        assert!(close(r.a_hat, 0.8));
        assert!(close(r.busy_hat, 0.5));
        assert!(close(r.stored_info_hat, 3.0));
        assert!(close(r.staleness_hat.unwrap(), 7.0));
        assert!(close(r.merge_rate_hat, 10.0 / 50.0));
        assert_eq!(r.o_curve, vec![0.25; 60]);
        assert_eq!(r.tracked_observations, 200);
        let full = synthetic(1000, 100);
        assert_eq!(availability_series(&full, 0.0).unwrap().0, 1.0);
    }

    #[test]
    fn warmup_excludes_early_traces() {
        let mut raw = synthetic(1000, 80);
        for t in raw.traces.iter_mut().take(150) {
            t.gen_time = 0.0;
        }
        assert_eq!(
            observation_availability_curve(&raw, 0.3),
            Err(MetricsError::TooFewObservations {
                found: 50,
                required: 100
            })
        );
        assert!(observation_availability_curve(&raw, 0.0).is_ok());
    }

    #[test]
    fn empty_windows_are_errors() {
        let mut raw = synthetic(10, 0);
        raw.samples.iter_mut().for_each(|s| {
            s.in_rz = 0;
            s.subscribers = vec![0];
        });
        assert_eq!(
            availability_series(&raw, 0.0),
            Err(MetricsError::EmptyWindow)
        );
        assert_eq!(
            staleness_estimate(&raw, 0.0),
            Err(MetricsError::NoInstances)
        );
    }

    #[test]
    fn identical_runs_have_zero_ci_and_order_does_not_matter() {
        let r = summarize(&synthetic(1000, 80), 0.3).unwrap();
        let agg = aggregate_runs(&[r.clone(), r.clone(), r.clone()]).unwrap();
        assert!(agg.ci95.a_hat.unwrap().abs() < 1e-12);
        assert!((agg.a_hat - r.a_hat).abs() < 1e-12);

        let reports: Vec<MetricsReport> = [60, 70, 80, 90]
            .iter()
            .map(|&h| summarize(&synthetic(1000, h), 0.3).unwrap())
            .collect();
        let mut reversed = reports.clone();
        reversed.reverse();
        assert_eq!(aggregate_runs(&reports), aggregate_runs(&reversed));
        assert_eq!(
            aggregate_runs(&reports[..1]),
            Err(MetricsError::InsufficientRuns(1))
        );
    }

    #[test]
    fn student_t_half_width() {
        // n = 4, sd = 1.2910: t_{0.975,3} = 3.1824.
        let (m, ci) = mean_ci(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        let expect = 3.182446305284263 * (1.6666666666666667f64 / 4.0).sqrt();
        assert!((ci.unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn csv_has_one_row_per_metric() {
        let r = summarize(&synthetic(1000, 80), 0.3).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("metric,value,ci95,runs\n"));
        assert!(text.lines().nth(1).unwrap().starts_with("a_hat,0.8"));
        assert!(text.lines().nth(1).unwrap().ends_with(",,1"));
        assert_eq!(text.lines().count(), 1 + r.rows().len());
    }
}
