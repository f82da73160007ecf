use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exchange::ms_to_us;
use crate::ids::QueryId;
use crate::packages::PackageRequest;
use crate::sandbox::Intent;
use crate::scheduler::MIB;
use crate::udf::{MemProfile, UdfKind, UdfMode};

use super::WarehouseError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UdfTemplate {
    #[serde(default = "default_udf_name")]
    pub name: String,
    #[serde(default = "default_kind")]
    pub kind: UdfKind,
    #[serde(default)]
    pub mode: UdfMode,
    pub per_row_cost_ms: f64,
    /// Constant peak in MiB. Ignored when `distribution` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem_peak_mb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<MemProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intents: Vec<Intent>,
}

fn default_udf_name() -> String {
    "udf".to_string()
}

fn default_kind() -> UdfKind {
    UdfKind::Scalar
}

impl UdfTemplate {
    pub fn new(per_row_cost_ms: f64, mem_profile: MemProfile) -> Self {
        Self {
            name: default_udf_name(),
            kind: UdfKind::Scalar,
            mode: UdfMode::Row,
            per_row_cost_ms,
            mem_peak_mb: None,
            distribution: Some(mem_profile),
            intents: Vec::new(),
        }
    }

    pub fn mem_profile(&self) -> MemProfile {
        match (&self.distribution, self.mem_peak_mb) {
            (Some(d), _) => d.clone(),
            (None, Some(mb)) => MemProfile::Constant {
                peak_bytes: (mb * MIB as f64).round() as u64,
            },
            (None, None) => MemProfile::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryTemplate {
    pub query_key: String,
    #[serde(default)]
    pub packages: Vec<PackageRequest>,
    pub udf: UdfTemplate,
    pub partitions: Vec<u64>,
    #[serde(default = "one")]
    pub repeat: u32,
}

fn one() -> u32 {
    1
}

impl QueryTemplate {
    pub fn total_rows(&self) -> u64 {
        self.partitions.iter().sum()
    }

    fn validate(&self) -> Result<(), WarehouseError> {
        let bad = |m: String| {
            Err(WarehouseError::InvalidWorkload(format!(
                "template `{}`: {m}",
                self.query_key
            )))
        };
        if self.query_key.is_empty() {
            return Err(WarehouseError::InvalidWorkload("empty query_key".into()));
        }
        if self.partitions.is_empty() {
            return bad("partitions must be non-empty".into());
        }
        if !(self.udf.per_row_cost_ms >= 0.0 && self.udf.per_row_cost_ms.is_finite()) {
            return bad("per_row_cost_ms must be finite and >= 0".into());
        }
        if let Some(mb) = self.udf.mem_peak_mb {
            if !(mb >= 0.0 && mb.is_finite()) {
                return bad("mem_peak_mb must be finite and >= 0".into());
            }
        }
        Ok(())
    }
}

/// Peak memory of one run. Each query draws from its own ChaCha stream, so
/// the value depends only on (seed, query id), not on scheduling order.
pub fn query_peak(template: &QueryTemplate, seed: u64, query_id: QueryId) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(query_id);
    template.udf.mem_profile().peak_bytes(template.total_rows(), &mut rng)
}

/// One query instance with its arrival time.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub query_id: QueryId,
    pub template: usize,
    pub submit_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Workload {
    pub templates: Vec<QueryTemplate>,
}

impl Workload {
    pub fn new(templates: Vec<QueryTemplate>) -> Result<Self, WarehouseError> {
        let w = Self { templates };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), WarehouseError> {
        self.templates.iter().try_for_each(QueryTemplate::validate)
    }

    pub fn from_json(text: &str) -> Result<Self, WarehouseError> {
        let w: Self = serde_json::from_str(text).map_err(|e| WarehouseError::InvalidWorkload(e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self, WarehouseError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| WarehouseError::InvalidWorkload(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("workload serializes")
    }

    /// Round-robin over templates until each has run `repeat` times; query
    /// `i` arrives at `i × interval`.
    pub fn submissions(&self, arrival_interval_ms: f64) -> Vec<Submission> {
        let rounds = self.templates.iter().map(|t| t.repeat).max().unwrap_or(0);
        let step = ms_to_us(arrival_interval_ms);
        let mut out = Vec::new();
        for r in 0..rounds {
            for (i, t) in self.templates.iter().enumerate() {
                if r < t.repeat {
                    let id = out.len() as QueryId;
                    out.push(Submission {
                        query_id: id,
                        template: i,
                        submit_us: id * step,
                    });
                }
            }
        }
        out
    }
}
