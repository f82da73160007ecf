//! Canned manifests, workloads and configurations behind the bench commands.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::packages::{Constraint, PackageRequest, RepositoryManifest, SolverCache};
use crate::sandbox::SandboxPolicy;
use crate::scheduler::MIB;
use crate::skew::zipf_partitions;
use crate::udf::MemProfile;
use crate::warehouse::{
    query_peak, run_workload, EstimatorKind, MetricsReport, QueryRecord, QueryStatus, QueryTemplate, RunConfig,
    UdfTemplate, VirtualWarehouse, WarehouseError, Workload,
};

pub const CACHE_TEMPLATES: usize = 20;
pub const CACHE_REPEATS: u32 = 50;
pub const SCHED_TEMPLATES: usize = 50;
pub const SCHED_REPEATS: u32 = 40;

const PKG_BYTES: u64 = 8 * MIB;

/// `analytics` pulls in `lib1`..`lib9` for a ten-package closure. Each
/// `extNN` depends on one lib at `>= 1.0`.
pub fn cache_manifest() -> RepositoryManifest {
    let mut m = RepositoryManifest::new();
    let libs: Vec<PackageRequest> = (1..10).map(|i| PackageRequest::any(&format!("lib{i}"))).collect();
    m = m.with("analytics", "1.0", PKG_BYTES, libs);
    for i in 1..10 {
        m = m.with(&format!("lib{i}"), "1.0", PKG_BYTES, vec![]);
        m = m.with(&format!("lib{i}"), "2.0", PKG_BYTES, vec![]);
    }
    let at_least = Constraint::AtLeast("1.0".parse().expect("version"));
    for i in 0..CACHE_TEMPLATES {
        let dep = PackageRequest::new(&format!("lib{}", i % 9 + 1), at_least.clone()).expect("request");
        m = m.with(&format!("ext{i:02}"), "1.0", PKG_BYTES, vec![dep]);
    }
    m
}

/// Ten-package probe: one cold run, one after a recycle, one warm.
pub fn probe_template() -> QueryTemplate {
    QueryTemplate {
        query_key: "probe".into(),
        packages: vec![PackageRequest::any("analytics")],
        udf: UdfTemplate::new(0.01, MemProfile::Constant { peak_bytes: 64 * MIB }),
        partitions: vec![100],
        repeat: 1,
    }
}

/// Twenty distinct package sets, each replayed `CACHE_REPEATS` times.
pub fn cache_workload() -> Workload {
    let templates = (0..CACHE_TEMPLATES)
        .map(|i| {
            let mut packages = vec![PackageRequest::any(&format!("ext{i:02}"))];
            if i % 2 == 1 {
                packages.push(PackageRequest::any("analytics"));
            }
            QueryTemplate {
                query_key: format!("cache-{i:02}"),
                packages,
                udf: UdfTemplate::new(0.01, MemProfile::Constant { peak_bytes: 64 * MIB }),
                partitions: vec![100, 100],
                repeat: CACHE_REPEATS,
            }
        })
        .collect();
    Workload { templates }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyProbe {
    pub cold_ms: u64,
    pub solver_hit_ms: u64,
    pub env_hit_ms: u64,
    pub solver_reduction: f64,
    pub env_reduction: f64,
    pub speedup: f64,
}

/// Environment-preparation latency (clones excluded) in the three cache states.
pub fn latency_probe(config: &RunConfig) -> Result<LatencyProbe, WarehouseError> {
    let mut config = config.clone();
    config.prefetch.clear();
    let mut wh = VirtualWarehouse::new(
        config,
        Arc::new(cache_manifest()),
        SandboxPolicy::default_policy(),
        Arc::new(SolverCache::new()),
    )?;
    let cold = wh.run_query(probe_template())?;
    wh.recycle_node(cold.node.unwrap_or(0))?;
    let solver = wh.run_query(probe_template())?;
    let env = wh.run_query(probe_template())?;
    let (c, s, e) = (cold.env_init_ms, solver.env_init_ms, env.env_init_ms);
    Ok(LatencyProbe {
        cold_ms: c,
        solver_hit_ms: s,
        env_hit_ms: e,
        solver_reduction: (c - s) as f64 / c as f64,
        env_reduction: (s - e) as f64 / s as f64,
        speedup: c as f64 / e as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheBench {
    pub latency: LatencyProbe,
    pub distinct_keys: u64,
    pub metrics: MetricsReport,
}

impl CacheBench {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bench serializes");
        s.push('\n');
        s
    }
}

pub fn bench_cache(config: &RunConfig) -> Result<CacheBench, WarehouseError> {
    let latency = latency_probe(config)?;
    let workload = cache_workload();
    let wh = run_workload(
        config,
        Arc::new(cache_manifest()),
        SandboxPolicy::default_policy(),
        &workload,
    )?;
    Ok(CacheBench {
        latency,
        distinct_keys: wh.solver().len() as u64,
        metrics: wh.metrics(),
    })
}

/// Fifty templates with stationary peaks spread over 32..424 MiB, ±5%.
/// All peaks stay under the 512 MiB default, so first runs never OOM.
pub fn sched_workload() -> Workload {
    let templates = (0..SCHED_TEMPLATES as u64)
        .map(|i| {
            let mean = (32 + 8 * i) * MIB;
            QueryTemplate {
                query_key: format!("sched-{i:02}"),
                packages: vec![],
                udf: UdfTemplate::new(
                    0.02,
                    MemProfile::Jitter {
                        mean_bytes: mean,
                        jitter_bytes: mean / 20,
                    },
                ),
                partitions: vec![250, 250],
                repeat: SCHED_REPEATS,
            }
        })
        .collect();
    Workload { templates }
}

/// Two 1 GiB nodes with arrivals every 25 ms: tight enough that reservation
/// size decides how much queueing happens.
pub fn sched_config() -> RunConfig {
    RunConfig {
        node_capacity_bytes: 1024 * MIB,
        arrival_interval_ms: 25.0,
        ..RunConfig::default()
    }
}

/// Peaks the workload will draw, by query id, under `seed`.
pub fn workload_peaks(workload: &Workload, arrival_interval_ms: f64, seed: u64) -> Vec<u64> {
    workload
        .submissions(arrival_interval_ms)
        .iter()
        .map(|s| query_peak(&workload.templates[s.template], seed, s.query_id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchedArm {
    pub name: String,
    pub estimator: EstimatorKind,
    pub static_bytes: Option<u64>,
    /// OOMs among runs after each template's first `k`.
    pub oom_after_warmup: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchedBench {
    pub mean_peak_bytes: u64,
    pub max_peak_bytes: u64,
    pub arms: Vec<SchedArm>,
}

impl SchedBench {
    pub fn arm(&self, name: &str) -> Option<&SchedArm> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bench serializes");
        s.push('\n');
        s
    }
}

/// Counts OOMs in runs whose per-template ordinal is at least `k`.
pub fn oom_after_warmup(records: &[QueryRecord], k: usize) -> u64 {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut sorted: Vec<&QueryRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.query_id);
    let mut n = 0;
    for r in sorted {
        let ordinal = seen.entry(&r.query_key).or_default();
        if *ordinal >= k && r.status == QueryStatus::Oom {
            n += 1;
        }
        *ordinal += 1;
    }
    n
}

/// Dynamic estimator against static reservations at the global mean and max peak.
pub fn bench_sched(config: &RunConfig) -> Result<SchedBench, WarehouseError> {
    let workload = sched_workload();
    let peaks = workload_peaks(&workload, config.arrival_interval_ms, config.seed);
    let mean = peaks.iter().sum::<u64>().div_ceil(peaks.len().max(1) as u64);
    let max = peaks.iter().copied().max().unwrap_or(0);
    let manifest = Arc::new(RepositoryManifest::new());
    let arms = [
        ("dynamic", EstimatorKind::Dynamic, None),
        ("static-mean", EstimatorKind::Static, Some(mean)),
        ("static-max", EstimatorKind::Static, Some(max)),
    ]
    .into_iter()
    .map(|(name, estimator, static_bytes)| {
        let mut c = config.clone();
        c.estimator = estimator;
        if let Some(b) = static_bytes {
            c.static_bytes = b;
        }
        let wh = run_workload(&c, Arc::clone(&manifest), SandboxPolicy::default_policy(), &workload)?;
        Ok(SchedArm {
            name: name.to_string(),
            estimator,
            static_bytes,
            oom_after_warmup: oom_after_warmup(&wh.records(), c.k),
            metrics: wh.metrics(),
        })
    })
    .collect::<Result<Vec<_>, WarehouseError>>()?;
    Ok(SchedBench {
        mean_peak_bytes: mean,
        max_peak_bytes: max,
        arms,
    })
}

/// Two nodes of four processes, eight interpreters, batches of 100 rows.
pub fn skew_config() -> RunConfig {
    RunConfig {
        max_interpreters: 8,
        batch_rows: 100,
        remote_batch_ms: 10.0,
        ser_us_per_row: 10.0,
        ..RunConfig::default()
    }
}

/// One query over Zipf(`s`) partitions at 5 ms per row.
pub fn skew_template(key: &str, partitions: usize, rows: u64, s: f64) -> QueryTemplate {
    QueryTemplate {
        query_key: key.into(),
        packages: vec![],
        udf: UdfTemplate::new(5.0, MemProfile::Constant { peak_bytes: 64 * MIB }),
        partitions: zipf_partitions(partitions, rows, s).expect("valid skew parameters"),
        repeat: 1,
    }
}
