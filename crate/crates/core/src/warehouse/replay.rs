use std::sync::Arc;

use serde::Serialize;

use crate::exchange::decide_from_history;
use crate::ids::QueryId;
use crate::packages::RepositoryManifest;
use crate::sandbox::SandboxPolicy;

use super::{run_workload, MetricsReport, QueryStatus, RedistributionMode, RunConfig, WarehouseError, Workload};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayDelta {
    pub query_id: QueryId,
    pub query_key: String,
    /// What the gate would decide for this query in production.
    pub gate_enabled: bool,
    pub makespan_on_ms: f64,
    pub makespan_off_ms: f64,
    pub delta_ms: f64,
    /// `(off − on) / off`; zero when the baseline took no time.
    pub gain: f64,
    pub status_on: QueryStatus,
    pub status_off: QueryStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbReport {
    pub arm_on: MetricsReport,
    pub arm_off: MetricsReport,
    pub deltas: Vec<ReplayDelta>,
    pub enabled_queries: u64,
    /// Mean gain over gate-enabled queries, if any.
    pub mean_gain_enabled: Option<f64>,
    pub applied_fraction: f64,
}

impl AbReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Keeps templates whose key starts with `filter` (all when `None`).
pub fn filter_workload(workload: &Workload, filter: Option<&str>) -> Workload {
    Workload {
        templates: workload
            .templates
            .iter()
            .filter(|t| filter.is_none_or(|f| t.query_key.starts_with(f)))
            .cloned()
            .collect(),
    }
}

/// Runs the matching queries twice on identical inputs, once with
/// redistribution forced on and once forced off, and pairs the makespans.
pub fn ab_replay(
    config: &RunConfig,
    manifest: Arc<RepositoryManifest>,
    policy: SandboxPolicy,
    workload: &Workload,
    filter: Option<&str>,
) -> Result<AbReport, WarehouseError> {
    let selected = filter_workload(workload, filter);
    if selected.templates.is_empty() {
        return Err(WarehouseError::InvalidWorkload(match filter {
            Some(f) => format!("no query matches `{f}`"),
            None => "workload has no queries".into(),
        }));
    }
    let arm = |mode: RedistributionMode| {
        let mut c = config.clone();
        c.redistribution = mode;
        run_workload(&c, Arc::clone(&manifest), policy.clone(), &selected)
    };
    let on = arm(RedistributionMode::On)?;
    let off = arm(RedistributionMode::Off)?;
    let ex = config.exchange();

    let mut deltas = Vec::new();
    for (a, b) in on.records().iter().zip(off.records().iter()) {
        debug_assert_eq!(a.query_id, b.query_id);
        let per_row = selected
            .templates
            .iter()
            .find(|t| t.query_key == a.query_key)
            .map(|t| t.udf.per_row_cost_ms)
            .unwrap_or(0.0);
        let gate = decide_from_history(&[per_row], config.k, ex.threshold_ms).enabled;
        let (x, y) = (a.makespan_ms(), b.makespan_ms());
        deltas.push(ReplayDelta {
            query_id: a.query_id,
            query_key: a.query_key.clone(),
            gate_enabled: gate,
            makespan_on_ms: x,
            makespan_off_ms: y,
            delta_ms: y - x,
            gain: if y > 0.0 { (y - x) / y } else { 0.0 },
            status_on: a.status,
            status_off: b.status,
        });
    }
    let enabled: Vec<f64> = deltas.iter().filter(|d| d.gate_enabled).map(|d| d.gain).collect();
    let n = deltas.len() as f64;
    Ok(AbReport {
        arm_on: on.metrics(),
        arm_off: off.metrics(),
        enabled_queries: enabled.len() as u64,
        mean_gain_enabled: (!enabled.is_empty()).then(|| enabled.iter().sum::<f64>() / enabled.len() as f64),
        applied_fraction: if n > 0.0 { enabled.len() as f64 / n } else { 0.0 },
        deltas,
    })
}
