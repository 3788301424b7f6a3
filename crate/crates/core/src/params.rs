//! System parameters shared by the analytic engine and the simulator.
//!
//! A configuration is a single JSON document. Unknown keys are rejected.
//! [`SystemParams::validate`] fills every derived field (transfer time,
//! replication-zone occupancy, entry rate, sojourn time) and records where
//! each value came from in the `provenance` map, so a validated document can
//! be written back out and re-read without changing meaning.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Provenance tag for a value computed from other fields.
pub const DERIVED: &str = "derived";
/// Provenance tag for a value computed from the area/zone geometry.
pub const GEOMETRIC: &str = "geometric";
/// Provenance tag for a value measured by mobility calibration.
pub const CALIBRATED: &str = "calibrated";
/// Provenance tag for a value given explicitly in the configuration.
pub const CONFIGURED: &str = "config";

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("field `{0}` must be strictly positive")]
    NonPositive(&'static str),
    #[error("field `{0}` must be non-negative")]
    Negative(&'static str),
    #[error("geometry violation: {0}")]
    GeometryViolation(String),
    #[error("model capacity is zero: floor(model_size / bits_per_observation) = floor({model_size} / {bits_per_observation})")]
    CapacityZero {
        model_size: f64,
        bits_per_observation: f64,
    },
    #[error("field `recorders` = {recorders} must satisfy 1 <= recorders <= min(subscription_limit, mean_nodes_in_rz) = {limit}")]
    RecordersOutOfRange { recorders: u32, limit: f64 },
    #[error("field `min_model_size` ({min}) exceeds `model_size` ({size})")]
    ModelBelowMinimum { size: f64, min: f64 },
    #[error("field `{field}` = {given} is inconsistent with the derived value {derived}")]
    Inconsistent {
        field: &'static str,
        given: f64,
        derived: f64,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config path `{0}` does not name a numeric field")]
    BadPath(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityConfig {
    /// Mean of the exponential heading epoch of the random-direction walk.
    pub epoch_mean_s: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig { epoch_mean_s: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Connection setup time.
    pub t0_s: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig { t0_s: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticConfig {
    /// Use `M λ Λ / N` (no `w`) in the sojourn term of the stability condition.
    pub condition_verbatim: bool,
    /// Use the textbook M/D/1 residual (½ factor) for the training term of `d_M`.
    pub dm_textbook: bool,
    /// Prefactor of the staleness bound; `None` means `1 / obs_rate`.
    pub staleness_delta: Option<f64>,
    /// Relaxation factor of the availability fixed point.
    pub damping: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    /// Damped iterations allowed before switching to bisection.
    pub bisection_after: usize,
    /// Monte-Carlo samples for the staleness bound.
    pub staleness_samples: usize,
}

impl Default for AnalyticConfig {
    fn default() -> Self {
        AnalyticConfig {
            condition_verbatim: false,
            dm_textbook: false,
            staleness_delta: None,
            damping: 0.5,
            tolerance: 1e-9,
            max_iter: 10_000,
            bisection_after: 200,
            staleness_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub warmup_fraction: f64,
    pub age_bucket_s: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            warmup_fraction: 0.3,
            age_bucket_s: 5.0,
        }
    }
}

/// Every scalar of the model. Optional fields are derived by [`validate`](Self::validate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemParams {
    pub n_total: u32,
    pub area_side: f64,
    pub rz_radius: f64,
    pub speed: f64,
    pub tx_range: f64,
    /// Bits per second over an established D2D link.
    pub channel_rate: f64,
    pub model_count: u32,
    /// Defaults to `model_count` (no subscription limit).
    pub subscription_limit: Option<u32>,
    /// Model size in bits.
    pub model_size: f64,
    /// Defaults to `model_size`.
    pub min_model_size: Option<f64>,
    pub bits_per_observation: f64,
    /// Per-model observation rate (1/s).
    pub obs_rate: f64,
    /// Nodes that record each observation.
    pub recorders: u32,
    pub train_time: f64,
    pub merge_time: f64,
    pub obs_lifetime: f64,
    pub slot: f64,
    pub mean_nodes_in_rz: Option<f64>,
    pub alpha: Option<f64>,
    pub contact_rate: Option<f64>,
    pub t_star: Option<f64>,
    pub transfer_time: Option<f64>,
    pub mobility: MobilityConfig,
    pub protocol: ProtocolConfig,
    pub analytic: AnalyticConfig,
    pub metrics: MetricsConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<BTreeMap<String, String>>,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            n_total: 200,
            area_side: 200.0,
            rz_radius: 100.0,
            speed: 0.5,
            tx_range: 5.0,
            channel_rate: 1e7,
            model_count: 1,
            subscription_limit: None,
            model_size: 1e4,
            min_model_size: None,
            bits_per_observation: 1.0,
            obs_rate: 0.1,
            recorders: 1,
            train_time: 5.0,
            merge_time: 2.5,
            obs_lifetime: 300.0,
            slot: 0.5,
            mean_nodes_in_rz: None,
            alpha: None,
            contact_rate: None,
            t_star: None,
            transfer_time: None,
            mobility: MobilityConfig::default(),
            protocol: ProtocolConfig::default(),
            analytic: AnalyticConfig::default(),
            metrics: MetricsConfig::default(),
            provenance: None,
        }
    }
}

/// Fraction of models a node subscribes to, and the effective model count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSubscription {
    pub w: f64,
    pub m_eff: u32,
}

impl EffectiveSubscription {
    pub fn new(model_count: u32, subscription_limit: u32) -> Self {
        let w = (subscription_limit as f64 / model_count as f64).min(1.0);
        EffectiveSubscription {
            w,
            m_eff: model_count.min(subscription_limit),
        }
    }
}

/// Occupancy, entry rate and mean sojourn of the replication zone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneGeometry {
    pub mean_nodes: f64,
    pub alpha: f64,
    pub t_star: f64,
}

/// Geometric defaults: uniform density gives the occupancy, the sojourn is
/// `√2·r/v`, and flow balance gives the entry rate.
pub fn derive_geometry(params: &SystemParams) -> ZoneGeometry {
    let mean_nodes =
        params.n_total as f64 * PI * params.rz_radius.powi(2) / params.area_side.powi(2);
    let t_star = SQRT_2 * params.rz_radius / params.speed;
    ZoneGeometry {
        mean_nodes,
        alpha: mean_nodes / t_star,
        t_star,
    }
}

fn positive(value: f64, field: &'static str) -> Result<(), ParamError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ParamError::NonPositive(field))
    }
}

fn non_negative(value: f64, field: &'static str) -> Result<(), ParamError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ParamError::Negative(field))
    }
}

impl SystemParams {
    pub fn from_json(text: &str) -> Result<Self, ParamError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ParamError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ParamError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    /// Checks every invariant and fills the derived fields.
    ///
    /// Derived values tagged `derived` or `geometric` are recomputed on every
    /// call, so the operation is idempotent; values tagged `config` or
    /// `calibrated` are kept.
    pub fn validate(&self) -> Result<SystemParams, ParamError> {
        let mut p = self.clone();
        if p.n_total == 0 {
            return Err(ParamError::NonPositive("n_total"));
        }
        if p.model_count == 0 {
            return Err(ParamError::NonPositive("model_count"));
        }
        if p.recorders == 0 {
            return Err(ParamError::NonPositive("recorders"));
        }
        positive(p.area_side, "area_side")?;
        positive(p.rz_radius, "rz_radius")?;
        positive(p.speed, "speed")?;
        positive(p.tx_range, "tx_range")?;
        positive(p.channel_rate, "channel_rate")?;
        positive(p.model_size, "model_size")?;
        positive(p.bits_per_observation, "bits_per_observation")?;
        positive(p.obs_lifetime, "obs_lifetime")?;
        positive(p.slot, "slot")?;
        positive(p.mobility.epoch_mean_s, "mobility.epoch_mean_s")?;
        non_negative(p.obs_rate, "obs_rate")?;
        non_negative(p.train_time, "train_time")?;
        non_negative(p.merge_time, "merge_time")?;
        non_negative(p.protocol.t0_s, "protocol.t0_s")?;
        let limit = p.subscription_limit.unwrap_or(p.model_count);
        if limit == 0 {
            return Err(ParamError::NonPositive("subscription_limit"));
        }
        p.subscription_limit = Some(limit);
        let min_size = p.min_model_size.unwrap_or(p.model_size);
        positive(min_size, "min_model_size")?;
        if p.model_size < min_size {
            return Err(ParamError::ModelBelowMinimum {
                size: p.model_size,
                min: min_size,
            });
        }
        p.min_model_size = Some(min_size);
        if (p.model_size / p.bits_per_observation).floor() < 1.0 {
            return Err(ParamError::CapacityZero {
                model_size: p.model_size,
                bits_per_observation: p.bits_per_observation,
            });
        }
        if p.rz_radius > p.area_side / 2.0 {
            return Err(ParamError::GeometryViolation(format!(
                "rz_radius {} exceeds area_side/2 = {}",
                p.rz_radius,
                p.area_side / 2.0
            )));
        }
        if p.tx_range >= p.rz_radius {
            return Err(ParamError::GeometryViolation(format!(
                "tx_range {} must be smaller than rz_radius {}",
                p.tx_range, p.rz_radius
            )));
        }
        let warmup = p.metrics.warmup_fraction;
        if !(0.0..1.0).contains(&warmup) {
            return Err(ParamError::GeometryViolation(format!(
                "metrics.warmup_fraction {warmup} outside [0, 1)"
            )));
        }
        positive(p.metrics.age_bucket_s, "metrics.age_bucket_s")?;
        positive(p.analytic.damping, "analytic.damping")?;
        positive(p.analytic.tolerance, "analytic.tolerance")?;

        let mut provenance = p.provenance.take().unwrap_or_default();
        let derived_tl = p.model_size / p.channel_rate;
        match (
            p.transfer_time,
            provenance.get("transfer_time").map(String::as_str),
        ) {
            (Some(given), None) | (Some(given), Some(CONFIGURED)) if given != derived_tl => {
                return Err(ParamError::Inconsistent {
                    field: "transfer_time",
                    given,
                    derived: derived_tl,
                });
            }
            _ => {}
        }
        p.transfer_time = Some(derived_tl);
        provenance.insert("transfer_time".into(), DERIVED.into());

        let geo = derive_geometry(&p);
        let mut resolve = |value: &mut Option<f64>, key: &str, default: f64| {
            let tag = provenance.get(key).map(String::as_str);
            match (*value, tag) {
                (Some(_), Some(CALIBRATED)) | (Some(_), Some(CONFIGURED)) => {}
                (Some(_), None) => {
                    provenance.insert(key.into(), CONFIGURED.into());
                }
                _ => {
                    *value = Some(default);
                    provenance.insert(key.into(), GEOMETRIC.into());
                }
            }
        };
        resolve(&mut p.mean_nodes_in_rz, "mean_nodes_in_rz", geo.mean_nodes);
        resolve(&mut p.t_star, "t_star", geo.t_star);
        let flow_alpha = p.mean_nodes_in_rz.unwrap() / p.t_star.unwrap();
        resolve(&mut p.alpha, "alpha", flow_alpha);
        if let Some(g) = p.contact_rate {
            non_negative(g, "contact_rate")?;
            provenance
                .entry("contact_rate".into())
                .or_insert_with(|| CONFIGURED.into());
        }
        positive(p.mean_nodes_in_rz.unwrap(), "mean_nodes_in_rz")?;
        positive(p.t_star.unwrap(), "t_star")?;
        non_negative(p.alpha.unwrap(), "alpha")?;

        let recorder_limit = (limit as f64).min(p.mean_nodes_in_rz.unwrap());
        if p.recorders as f64 > recorder_limit {
            return Err(ParamError::RecordersOutOfRange {
                recorders: p.recorders,
                limit: recorder_limit,
            });
        }
        p.provenance = Some(provenance);
        Ok(p)
    }

    /// Replaces occupancy, entry rate, sojourn and contact rate with
    /// calibrated values and re-validates.
    pub fn with_calibration(
        &self,
        mean_nodes: f64,
        alpha: f64,
        t_star: f64,
        contact_rate: f64,
    ) -> Result<SystemParams, ParamError> {
        let mut p = self.clone();
        p.mean_nodes_in_rz = Some(mean_nodes);
        p.alpha = Some(alpha);
        p.t_star = Some(t_star);
        p.contact_rate = Some(contact_rate);
        let prov = p.provenance.get_or_insert_with(BTreeMap::new);
        for key in ["mean_nodes_in_rz", "alpha", "t_star", "contact_rate"] {
            prov.insert(key.into(), CALIBRATED.into());
        }
        p.validate()
    }

    /// Sets a numeric field addressed by its JSON path (`model_size`,
    /// `mobility.epoch_mean_s`, ...). Derived fields computed from the old
    /// value are recomputed by the validation that follows.
    pub fn with_value(&self, path: &str, value: f64) -> Result<SystemParams, ParamError> {
        let mut base = self.clone();
        // Defaults that track another field keep tracking it.
        if path == "model_size" && base.min_model_size.is_none_or(|m| m >= base.model_size) {
            base.min_model_size = None;
        }
        if path == "model_count"
            && base
                .subscription_limit
                .is_none_or(|w| w >= base.model_count)
        {
            base.subscription_limit = None;
        }
        let mut doc = serde_json::to_value(&base)?;
        let mut cursor = &mut doc;
        for part in path.split('.') {
            cursor = cursor
                .get_mut(part)
                .ok_or_else(|| ParamError::BadPath(path.to_string()))?;
        }
        let is_integer = matches!(
            path,
            "n_total" | "model_count" | "subscription_limit" | "recorders"
        );
        match cursor {
            serde_json::Value::Number(_) | serde_json::Value::Null => {
                *cursor = if is_integer {
                    if value < 0.0 || value.fract() != 0.0 {
                        return Err(ParamError::BadPath(format!("{path} expects an integer")));
                    }
                    serde_json::json!(value as u64)
                } else {
                    serde_json::json!(value)
                };
            }
            _ => return Err(ParamError::BadPath(path.to_string())),
        }
        let mut p: SystemParams = serde_json::from_value(doc)?;
        if let Some(prov) = p.provenance.as_mut() {
            prov.insert(path.to_string(), CONFIGURED.into());
        }
        p.validate()
    }

    /// Changes the model count. A subscription limit equal to the old count
    /// (no limit in effect) follows the new count.
    pub fn with_model_count(&self, model_count: u32) -> Result<SystemParams, ParamError> {
        let mut p = self.clone();
        if p.subscription_limit.is_none_or(|w| w >= p.model_count) {
            p.subscription_limit = None;
        }
        p.model_count = model_count;
        p.validate()
    }

    pub fn subscription(&self) -> EffectiveSubscription {
        EffectiveSubscription::new(
            self.model_count,
            self.subscription_limit.unwrap_or(self.model_count),
        )
    }

    /// Observations one instance can hold, `floor(L / k)`.
    pub fn capacity(&self) -> usize {
        (self.model_size / self.bits_per_observation).floor() as usize
    }

    pub fn transfer_time(&self) -> f64 {
        self.model_size / self.channel_rate
    }

    pub fn mean_nodes(&self) -> f64 {
        self.mean_nodes_in_rz
            .unwrap_or_else(|| derive_geometry(self).mean_nodes)
    }

    pub fn entry_rate(&self) -> f64 {
        self.alpha.unwrap_or_else(|| derive_geometry(self).alpha)
    }

    pub fn sojourn(&self) -> f64 {
        self.t_star.unwrap_or_else(|| derive_geometry(self).t_star)
    }

    pub fn t0(&self) -> f64 {
        self.protocol.t0_s
    }

    /// Prefactor of the staleness bound.
    pub fn staleness_delta(&self) -> f64 {
        self.analytic.staleness_delta.unwrap_or(1.0 / self.obs_rate)
    }
}
