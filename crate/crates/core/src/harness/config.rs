//! Run configuration: every tunable of the simulation in one JSON file.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::generate::RequestDistribution;
use crate::agents::{default_inventory, ArmParams, TemiParams, WaypointGraph, TICKS_PER_SECOND};
use crate::num::Scalar;
use crate::orchestrator::{OrchestratorConfig, PhaseBudgets};
use crate::predictor::PredictorParams;
use crate::taxonomy::DetectorParams;
use crate::thermal::RenderParams;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrokerParams {
    pub retry_interval_ticks: u64,
    pub retry_cap: u32,
    pub max_payload: usize,
}

impl Default for BrokerParams {
    fn default() -> Self {
        BrokerParams { retry_interval_ticks: 28, retry_cap: 3, max_payload: 256 * 1024 }
    }
}

impl BrokerParams {
    pub fn broker_config(&self) -> ward_mqtt::BrokerConfig {
        ward_mqtt::BrokerConfig { retry_interval_ticks: self.retry_interval_ticks, retry_cap: self.retry_cap }
    }

    pub fn codec(&self) -> ward_mqtt::Codec {
        ward_mqtt::Codec { max_payload: self.max_payload }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchParams {
    pub payload_bytes: usize,
    pub messages: usize,
    /// p99 budget in milliseconds.
    pub budget_ms: f64,
    /// Messages in flight before the publisher waits for the subscriber.
    pub window: usize,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams { payload_bytes: 1024, messages: 10_000, budget_ms: 10.0, window: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RealtimeParams {
    /// Wall-clock length of one tick.
    pub tick_ms: u64,
}

impl Default for RealtimeParams {
    fn default() -> Self {
        RealtimeParams { tick_ms: 1000 / TICKS_PER_SECOND }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct SimConfig<T> {
    pub schema_version: u32,
    pub render: RenderParams<T>,
    pub predictor: PredictorParams<T>,
    pub budgets: PhaseBudgets,
    /// Items on the arm's table and their counts, restocked every trial.
    pub inventory: BTreeMap<String, u32>,
    pub waypoints: WaypointGraph<T>,
    pub temi: TemiParams<T>,
    pub arm: ArmParams<T>,
    pub broker: BrokerParams,
    pub detectors: DetectorParams,
    pub heartbeat_interval_ticks: u64,
    /// Ticks a trial may run past its body script while robots finish.
    pub trial_tail_ticks: u64,
    pub requests: RequestDistribution,
    pub bench: BenchParams,
    pub realtime: RealtimeParams,
}

impl<T: Scalar> Default for SimConfig<T> {
    fn default() -> Self {
        SimConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            render: RenderParams::default(),
            predictor: PredictorParams::default(),
            budgets: PhaseBudgets::default(),
            inventory: default_inventory(),
            waypoints: WaypointGraph::default(),
            temi: TemiParams::default(),
            arm: ArmParams::default(),
            broker: BrokerParams::default(),
            detectors: DetectorParams::default(),
            heartbeat_interval_ticks: TICKS_PER_SECOND,
            trial_tail_ticks: 300 * TICKS_PER_SECOND,
            requests: RequestDistribution::default(),
            bench: BenchParams::default(),
            realtime: RealtimeParams::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unsupported config schema_version {0}")]
    SchemaVersion(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl<T: Scalar> SimConfig<T> {
    pub fn orchestrator(&self) -> OrchestratorConfig {
        OrchestratorConfig { inventory: self.inventory.keys().cloned().collect(), budgets: self.budgets }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion(self.schema_version));
        }
        let invalid = |s: &str| Err(ConfigError::Invalid(s.to_string()));
        self.waypoints.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.heartbeat_interval_ticks == 0 {
            return invalid("heartbeat_interval_ticks must be positive");
        }
        if self.broker.retry_interval_ticks == 0 {
            return invalid("broker.retry_interval_ticks must be positive");
        }
        if self.predictor.window < 2 {
            return invalid("predictor.window must be at least 2");
        }
        let p = self.arm.failure_prob.to_f64_lossy();
        if !(0.0..=1.0).contains(&p) {
            return invalid("arm.failure_prob outside [0, 1]");
        }
        if self.requests.items.is_empty() || self.requests.touch_prob_by_repetition.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return invalid("requests needs items and probabilities in [0, 1]");
        }
        if self.bench.window == 0 || self.bench.budget_ms <= 0.0 {
            return invalid("bench.window and bench.budget_ms must be positive");
        }
        Ok(())
    }
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> SimConfig<T> {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = SimConfig::<f64>::default();
        cfg.validate().unwrap();
        let back = SimConfig::<f64>::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back, cfg);
        let partial = SimConfig::<f64>::from_json(r#"{"heartbeat_interval_ticks": 7}"#).unwrap();
        assert_eq!(partial.heartbeat_interval_ticks, 7);
        assert_eq!(partial.broker, BrokerParams::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(SimConfig::<f64>::from_json(r#"{"schema_version": 9}"#), Err(ConfigError::SchemaVersion(9))));
        assert!(SimConfig::<f64>::from_json(r#"{"arm": {"failure_prob": 1.5}}"#).is_err());
    }
}
