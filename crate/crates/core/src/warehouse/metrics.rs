use serde::Serialize;

use crate::ids::{NodeId, QueryId};
use crate::packages::CacheCounters;
use crate::scheduler::{nearest_rank, EstimateSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryStatus {
    Success,
    Oom,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRecord {
    pub query_id: QueryId,
    pub query_key: String,
    pub udf: String,
    pub partitions: Vec<u64>,
    pub submit_us: u64,
    pub placed_us: u64,
    pub init_done_us: u64,
    pub finish_us: u64,
    pub status: QueryStatus,
    pub node: Option<NodeId>,
    pub estimate_bytes: u64,
    pub estimate_source: EstimateSource,
    pub observed_max_bytes: u64,
    pub solver_hit: bool,
    pub env_hit: bool,
    /// Environment preparation alone.
    pub env_init_ms: u64,
    /// Environment preparation plus interpreter clones.
    pub init_latency_ms: u64,
    pub interpreters: u32,
    pub redistributed: bool,
    pub denials: u64,
    pub discarded_batches: u64,
    pub error: Option<String>,
}

impl QueryRecord {
    pub fn queue_wait_us(&self) -> u64 {
        self.placed_us - self.submit_us
    }

    pub fn makespan_us(&self) -> u64 {
        self.finish_us - self.init_done_us
    }

    pub fn makespan_ms(&self) -> f64 {
        self.makespan_us() as f64 / 1000.0
    }

    pub fn executed(&self) -> bool {
        self.status != QueryStatus::Failed
    }

    pub fn timestamps_monotone(&self) -> bool {
        self.submit_us <= self.placed_us && self.placed_us <= self.init_done_us && self.init_done_us <= self.finish_us
    }
}

/// Nearest-rank percentile: the `ceil(p/100 · n)`-th smallest value.
pub fn percentile<T: Ord + Copy>(values: &[T], p: f64) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    Some(v[nearest_rank(p, v.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateReport {
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
}

impl From<CacheCounters> for RateReport {
    fn from(c: CacheCounters) -> Self {
        Self {
            hits: c.hits,
            misses: c.misses,
            hit_rate: c.hit_rate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LatencyPercentiles {
    pub p75: u64,
    pub p90: u64,
    pub p95: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueueWaitReport {
    pub p90: f64,
    pub max: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMakespan {
    pub query_id: QueryId,
    pub query_key: String,
    pub status: QueryStatus,
    pub redistributed: bool,
    pub makespan_ms: f64,
}

/// Cache counters read at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheTotals {
    pub solver: CacheCounters,
    pub env: CacheCounters,
    pub binary: CacheCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub queries: u64,
    pub succeeded: u64,
    pub oom: u64,
    pub failed: u64,
    pub oom_rate: f64,
    pub solver_cache: RateReport,
    pub env_cache: RateReport,
    pub binary_cache: RateReport,
    pub warmup_ms: u64,
    pub init_latency_ms: LatencyPercentiles,
    pub queue_wait_ms: QueueWaitReport,
    pub redistribution_applied_fraction: f64,
    pub sandbox_denials: u64,
    pub discarded_batches: u64,
    pub makespans: Vec<QueryMakespan>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Aggregates finished records. Latency percentiles and the applied fraction
/// cover executed queries; queue wait covers every placed query.
pub fn collect_metrics(
    records: &[QueryRecord],
    caches: CacheTotals,
    warmup_ms: u64,
    sandbox_denials: u64,
) -> MetricsReport {
    let count = |s: QueryStatus| records.iter().filter(|r| r.status == s).count() as u64;
    let executed: Vec<&QueryRecord> = records.iter().filter(|r| r.executed()).collect();
    let init: Vec<u64> = executed.iter().map(|r| r.init_latency_ms).collect();
    let waits: Vec<u64> = records.iter().map(QueryRecord::queue_wait_us).collect();
    let us_ms = |us: u64| us as f64 / 1000.0;
    let mut makespans: Vec<QueryMakespan> = records
        .iter()
        .map(|r| QueryMakespan {
            query_id: r.query_id,
            query_key: r.query_key.clone(),
            status: r.status,
            redistributed: r.redistributed,
            makespan_ms: r.makespan_ms(),
        })
        .collect();
    makespans.sort_by_key(|m| m.query_id);
    MetricsReport {
        queries: records.len() as u64,
        succeeded: count(QueryStatus::Success),
        oom: count(QueryStatus::Oom),
        failed: count(QueryStatus::Failed),
        oom_rate: ratio(count(QueryStatus::Oom), records.len() as u64),
        solver_cache: caches.solver.into(),
        env_cache: caches.env.into(),
        binary_cache: caches.binary.into(),
        warmup_ms,
        init_latency_ms: LatencyPercentiles {
            p75: percentile(&init, 75.0).unwrap_or(0),
            p90: percentile(&init, 90.0).unwrap_or(0),
            p95: percentile(&init, 95.0).unwrap_or(0),
        },
        queue_wait_ms: QueueWaitReport {
            p90: us_ms(percentile(&waits, 90.0).unwrap_or(0)),
            max: us_ms(waits.iter().copied().max().unwrap_or(0)),
            total: us_ms(waits.iter().sum()),
        },
        redistribution_applied_fraction: ratio(
            executed.iter().filter(|r| r.redistributed).count() as u64,
            executed.len() as u64,
        ),
        sandbox_denials,
        discarded_batches: records.iter().map(|r| r.discarded_batches).sum(),
        makespans,
    }
}
