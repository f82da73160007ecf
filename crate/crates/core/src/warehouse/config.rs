use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::exchange::ExchangeConfig;
use crate::packages::CostModel;
use crate::scheduler::{EstimatorParams, EstimatorPolicy, MIB};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },
    #[error("expected key=value, got `{0}`")]
    MalformedAssignment(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Simulated,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    #[default]
    Dynamic,
    Static,
}

/// `auto` consults the gate; `on` and `off` force an arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RedistributionMode {
    #[default]
    Auto,
    On,
    Off,
}

/// Every tunable of a run, as flat keys so `--set key=value` can reach all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,

    pub nodes: u32,
    pub procs_per_node: u32,
    pub node_capacity_bytes: u64,
    pub max_interpreters: u32,
    pub clone_ms: u64,
    pub cpu_ms: u64,
    pub binary_cache_bytes: u64,
    pub arrival_interval_ms: f64,
    /// `name@version` pins, or bare names for the highest version.
    pub prefetch: Vec<String>,

    pub estimator: EstimatorKind,
    pub k: usize,
    pub p: f64,
    pub f: f64,
    pub default_bytes: u64,
    pub static_bytes: u64,

    pub redistribution: RedistributionMode,
    pub threshold_ms: f64,
    pub batch_rows: u64,
    pub max_outstanding: usize,
    pub remote_batch_ms: f64,
    pub ser_us_per_row: f64,

    pub base_ms: u64,
    pub solve_ms: u64,
    pub per_package_ms: u64,
    pub env_load_ms: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let est = EstimatorParams::default();
        let ex = ExchangeConfig::default();
        let cost = CostModel::default();
        Self {
            mode: Mode::Simulated,
            seed: 42,
            nodes: 2,
            procs_per_node: 4,
            node_capacity_bytes: 8 * 1024 * MIB,
            max_interpreters: 4,
            clone_ms: 5,
            cpu_ms: 3_600_000,
            binary_cache_bytes: 8 * 1024 * MIB,
            arrival_interval_ms: 100.0,
            prefetch: Vec::new(),
            estimator: EstimatorKind::Dynamic,
            k: est.k,
            p: est.p,
            f: est.f,
            default_bytes: est.default_bytes,
            static_bytes: est.default_bytes,
            redistribution: RedistributionMode::Auto,
            threshold_ms: ex.threshold_ms,
            batch_rows: ex.batch_rows,
            max_outstanding: ex.max_outstanding,
            remote_batch_ms: ex.remote_batch_ms,
            ser_us_per_row: ex.ser_us_per_row,
            base_ms: cost.base_ms,
            solve_ms: cost.solve_ms,
            per_package_ms: cost.per_package_ms,
            env_load_ms: cost.env_load_ms,
        }
    }
}

fn parse_scalar(raw: &str, current: &Json) -> Json {
    if let Ok(v) = serde_json::from_str::<Json>(raw) {
        if !(current.is_array() && !v.is_array()) {
            return v;
        }
    }
    match current {
        Json::Array(_) => Json::Array(
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| Json::String(s.to_string()))
                .collect(),
        ),
        _ => Json::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: Self = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Overrides one key. The value is read as JSON when possible, else as a
    /// bare string; list keys also accept comma-separated items.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let obj = doc.as_object_mut().expect("config is an object");
        let current = obj.get(key).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let v = parse_scalar(raw, current);
        obj.insert(key.to_string(), v);
        *self = serde_json::from_value(doc).map_err(|e| ConfigError::InvalidValue {
            key: key.to_string(),
            message: e.to_string(),
        })?;
        Ok(())
    }

    pub fn apply_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::MalformedAssignment(assignment.to_string()))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.nodes == 0 || self.procs_per_node == 0 {
            return bad("nodes and procs_per_node must be >= 1");
        }
        if self.max_interpreters == 0 {
            return bad("max_interpreters must be >= 1");
        }
        if self.node_capacity_bytes == 0 || self.binary_cache_bytes == 0 || self.cpu_ms == 0 {
            return bad("node_capacity_bytes, binary_cache_bytes and cpu_ms must be > 0");
        }
        if !(self.arrival_interval_ms >= 0.0 && self.arrival_interval_ms.is_finite()) {
            return bad("arrival_interval_ms must be finite and >= 0");
        }
        self.estimator_params()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.estimator == EstimatorKind::Static && self.static_bytes == 0 {
            return bad("static_bytes must be > 0");
        }
        if !(self.threshold_ms > 0.0 && self.threshold_ms.is_finite()) {
            return bad("threshold_ms must be finite and > 0");
        }
        if self.batch_rows == 0 || self.max_outstanding == 0 {
            return bad("batch_rows and max_outstanding must be >= 1");
        }
        if !self.exchange().cost().is_valid() {
            return bad("remote_batch_ms and ser_us_per_row must be finite and >= 0");
        }
        Ok(())
    }

    pub fn estimator_params(&self) -> EstimatorParams {
        EstimatorParams {
            k: self.k,
            p: self.p,
            f: self.f,
            default_bytes: self.default_bytes,
        }
    }

    pub fn estimator_policy(&self) -> EstimatorPolicy {
        match self.estimator {
            EstimatorKind::Dynamic => EstimatorPolicy::Dynamic(self.estimator_params()),
            EstimatorKind::Static => EstimatorPolicy::Static {
                bytes: self.static_bytes,
            },
        }
    }

    pub fn exchange(&self) -> ExchangeConfig {
        ExchangeConfig {
            threshold_ms: self.threshold_ms,
            batch_rows: self.batch_rows,
            max_outstanding: self.max_outstanding,
            remote_batch_ms: self.remote_batch_ms,
            ser_us_per_row: self.ser_us_per_row,
        }
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel {
            base_ms: self.base_ms,
            solve_ms: self.solve_ms,
            per_package_ms: self.per_package_ms,
            env_load_ms: self.env_load_ms,
        }
    }

    /// Interpreter processes forked per query.
    pub fn interpreters_per_query(&self) -> u32 {
        (self.procs_per_node * self.nodes).min(self.max_interpreters)
    }
}
