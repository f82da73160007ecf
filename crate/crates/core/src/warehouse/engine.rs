use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use serde::Serialize;

use crate::exchange::{decide, simulate_stream, RedistributionDecision};
use crate::ids::{NodeId, ProcessId, QueryId};
use crate::packages::{EnvironmentCache, RepositoryManifest, SolverCache, Version};
use crate::sandbox::{
    Decision, EvalContext, ResourceBudget, SandboxHandle, SandboxManager, SandboxPolicy, SupervisorLog,
};
use crate::scheduler::{enforce_limit, Admission, LimitCheck, MemoryEstimate, Scheduler, StatsStore};

use super::config::{Mode, RedistributionMode, RunConfig};
use super::metrics::{collect_metrics, CacheTotals, MetricsReport, QueryRecord, QueryStatus};
use super::workload::{query_peak, QueryTemplate, Workload};
use super::WarehouseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessMode {
    Simulated,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessState {
    Idle,
    Busy,
    Dead,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InterpreterProcess {
    pub id: ProcessId,
    pub mode: ProcessMode,
    pub state: ProcessState,
    pub query_id: QueryId,
}

// Completions sort before arrivals at the same instant so freed memory is
// visible to the arriving query.
const FINISH: u8 = 0;
const ARRIVAL: u8 = 1;

struct Pending {
    template: Arc<QueryTemplate>,
    submit_us: u64,
    estimate: Option<MemoryEstimate>,
}

struct Running {
    record: QueryRecord,
    template: Arc<QueryTemplate>,
    sandbox: Option<SandboxHandle>,
    executed: bool,
}

/// A simulated virtual warehouse: nodes with memory reservations, a pool of
/// interpreter slots, one environment cache, and a virtual clock in µs.
pub struct VirtualWarehouse {
    config: RunConfig,
    manifest: Arc<RepositoryManifest>,
    policy: SandboxPolicy,
    solver: Arc<SolverCache>,
    env_cache: EnvironmentCache,
    scheduler: Scheduler,
    stats: StatsStore,
    sandboxes: SandboxManager,
    log: SupervisorLog,
    next_pid: Vec<u32>,
    live: BTreeMap<ProcessId, InterpreterProcess>,
    clock_us: u64,
    warmup_ms: u64,
    next_query: QueryId,
    events: BinaryHeap<Reverse<(u64, u8, QueryId)>>,
    pending: BTreeMap<QueryId, Pending>,
    running: BTreeMap<QueryId, Running>,
    finished: BTreeMap<QueryId, QueryRecord>,
    errors: BTreeMap<QueryId, WarehouseError>,
}

fn parse_pin(spec: &str, manifest: &RepositoryManifest) -> Result<(String, Version), WarehouseError> {
    let unknown = || WarehouseError::Package(crate::packages::PackageError::UnknownPackage(spec.to_string()));
    match spec.split_once('@') {
        Some((name, v)) => Ok((name.to_string(), v.parse().map_err(WarehouseError::Package)?)),
        None => manifest
            .versions(spec)
            .next_back()
            .map(|v| (spec.to_string(), v.clone()))
            .ok_or_else(unknown),
    }
}

impl VirtualWarehouse {
    pub fn new(
        config: RunConfig,
        manifest: Arc<RepositoryManifest>,
        policy: SandboxPolicy,
        solver: Arc<SolverCache>,
    ) -> Result<Self, WarehouseError> {
        config.validate()?;
        if config.mode == Mode::Live {
            return Err(WarehouseError::LiveModeUnavailable);
        }
        let env_cache = EnvironmentCache::new(config.binary_cache_bytes);
        let popular = config
            .prefetch
            .iter()
            .map(|s| parse_pin(s, &manifest))
            .collect::<Result<Vec<_>, _>>()?;
        let warmup_ms = env_cache.prefetch(&popular, &manifest, &config.cost_model())?;
        Ok(Self {
            scheduler: Scheduler::new(config.nodes as usize, config.node_capacity_bytes),
            stats: StatsStore::new(config.k),
            next_pid: vec![0; config.nodes as usize],
            config,
            manifest,
            policy,
            solver,
            env_cache,
            sandboxes: SandboxManager::new(),
            log: SupervisorLog::new(),
            live: BTreeMap::new(),
            clock_us: 0,
            warmup_ms,
            next_query: 0,
            events: BinaryHeap::new(),
            pending: BTreeMap::new(),
            running: BTreeMap::new(),
            finished: BTreeMap::new(),
            errors: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn env_cache(&self) -> &EnvironmentCache {
        &self.env_cache
    }

    pub fn solver(&self) -> &SolverCache {
        &self.solver
    }

    pub fn stats(&self) -> &StatsStore {
        &self.stats
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn log(&self) -> &SupervisorLog {
        &self.log
    }

    pub fn clock_us(&self) -> u64 {
        self.clock_us
    }

    pub fn warmup_ms(&self) -> u64 {
        self.warmup_ms
    }

    /// Processes currently bound to a query.
    pub fn live_processes(&self) -> impl Iterator<Item = &InterpreterProcess> {
        self.live.values()
    }

    /// Enqueues an arrival; times in the past are clamped to the clock.
    pub fn submit(&mut self, template: QueryTemplate, submit_us: u64) -> QueryId {
        self.submit_shared(Arc::new(template), submit_us)
    }

    fn submit_shared(&mut self, template: Arc<QueryTemplate>, submit_us: u64) -> QueryId {
        let id = self.next_query;
        self.next_query += 1;
        let t = submit_us.max(self.clock_us);
        self.pending.insert(
            id,
            Pending {
                template,
                submit_us: t,
                estimate: None,
            },
        );
        self.events.push(Reverse((t, ARRIVAL, id)));
        id
    }

    /// Processes one event. Returns false when nothing is left.
    pub fn step(&mut self) -> Result<bool, WarehouseError> {
        let Some(Reverse((t, kind, q))) = self.events.pop() else {
            return Ok(false);
        };
        self.clock_us = t;
        match kind {
            ARRIVAL => self.on_arrival(q)?,
            _ => self.on_finish(q)?,
        }
        debug_assert!(self.scheduler.check_conservation());
        Ok(true)
    }

    pub fn run_until_idle(&mut self) -> Result<(), WarehouseError> {
        while self.step()? {}
        Ok(())
    }

    /// Submits one query now and runs the warehouse until it is idle.
    /// Resolution failures and impossible estimates surface as errors.
    pub fn run_query(&mut self, template: QueryTemplate) -> Result<QueryRecord, WarehouseError> {
        let id = self.submit(template, self.clock_us);
        self.run_until_idle()?;
        if let Some(e) = self.errors.get(&id) {
            return Err(e.clone());
        }
        Ok(self.finished[&id].clone())
    }

    pub fn records(&self) -> Vec<QueryRecord> {
        self.finished.values().cloned().collect()
    }

    pub fn record(&self, id: QueryId) -> Option<&QueryRecord> {
        self.finished.get(&id)
    }

    pub fn cache_totals(&self) -> CacheTotals {
        CacheTotals {
            solver: self.solver.counters(),
            env: self.env_cache.env_counters(),
            binary: self.env_cache.binary_counters(),
        }
    }

    pub fn metrics(&self) -> MetricsReport {
        collect_metrics(
            &self.records(),
            self.cache_totals(),
            self.warmup_ms,
            self.log.len() as u64,
        )
    }

    /// Forks `count` interpreters for a query placed on `home`, spread
    /// round-robin over nodes starting there. Process numbers are never reused.
    pub fn fork_interpreters(
        &mut self,
        query_id: QueryId,
        count: u32,
        home: NodeId,
    ) -> Result<Vec<InterpreterProcess>, WarehouseError> {
        let slots = self.config.procs_per_node * self.config.nodes;
        if count == 0 || count > slots {
            return Err(WarehouseError::NoFreeSlots {
                requested: count,
                slots,
            });
        }
        let nodes = self.config.nodes;
        let mut out = Vec::with_capacity(count as usize);
        for i in 0..count {
            let node = (home + i) % nodes;
            let pid = &mut self.next_pid[node as usize];
            let p = InterpreterProcess {
                id: ProcessId::new(node, *pid),
                mode: ProcessMode::Simulated,
                state: ProcessState::Idle,
                query_id,
            };
            *pid += 1;
            let clash = self.live.insert(p.id, p.clone());
            assert!(clash.is_none(), "process id reused while live");
            out.push(p);
        }
        Ok(out)
    }

    /// Resets the warehouse environment cache. The node must hold no reservations.
    pub fn recycle_node(&mut self, node_id: NodeId) -> Result<(), WarehouseError> {
        let node = self
            .scheduler
            .node(node_id)
            .ok_or(WarehouseError::UnknownNode(node_id))?;
        if !node.is_idle() {
            return Err(WarehouseError::NodeBusy(node_id));
        }
        self.env_cache.recycle();
        Ok(())
    }

    fn on_arrival(&mut self, q: QueryId) -> Result<(), WarehouseError> {
        let now = self.clock_us;
        let p = self.pending.get_mut(&q).expect("pending arrival");
        let est = self
            .config
            .estimator_policy()
            .estimate(&self.stats, &p.template.query_key)?;
        p.estimate = Some(est);
        match self.scheduler.admit(q, est, now) {
            Ok(Admission::Placed(node)) => self.start(q, node),
            Ok(Admission::Queued) => Ok(()),
            Err(e) => {
                let p = self.pending.remove(&q).expect("pending arrival");
                let mut r = self.skeleton(q, &p, now);
                r.status = QueryStatus::Failed;
                r.error = Some(e.to_string());
                self.errors.insert(q, e.into());
                self.finished.insert(q, r);
                Ok(())
            }
        }
    }

    fn skeleton(&self, q: QueryId, p: &Pending, now: u64) -> QueryRecord {
        let est = p.estimate.expect("estimated at arrival");
        QueryRecord {
            query_id: q,
            query_key: p.template.query_key.clone(),
            udf: p.template.udf.name.clone(),
            partitions: p.template.partitions.clone(),
            submit_us: p.submit_us,
            placed_us: now,
            init_done_us: now,
            finish_us: now,
            status: QueryStatus::Success,
            node: None,
            estimate_bytes: est.bytes,
            estimate_source: est.source,
            observed_max_bytes: 0,
            solver_hit: false,
            env_hit: false,
            env_init_ms: 0,
            init_latency_ms: 0,
            interpreters: 0,
            redistributed: false,
            denials: 0,
            discarded_batches: 0,
            error: None,
        }
    }

    fn start(&mut self, q: QueryId, node: NodeId) -> Result<(), WarehouseError> {
        let now = self.clock_us;
        let p = self.pending.remove(&q).expect("pending placement");
        let mut record = self.skeleton(q, &p, now);
        record.node = Some(node);
        self.stats.begin_query(&p.template.query_key, q);
        let mut run = Running {
            record,
            template: p.template,
            sandbox: None,
            executed: false,
        };
        if let Err(e) = self.execute(q, node, &mut run) {
            run.record.status = QueryStatus::Failed;
            run.record.error = Some(e.to_string());
            run.record.init_done_us = run.record.init_done_us.max(now);
            run.record.finish_us = run.record.init_done_us;
            self.errors.insert(q, e);
        }
        self.events.push(Reverse((run.record.finish_us, FINISH, q)));
        self.running.insert(q, run);
        Ok(())
    }

    /// Environment, sandbox, interpreters, then the batch stream with memory
    /// sampling. Fills in the record up to its finish time.
    fn execute(&mut self, q: QueryId, node: NodeId, run: &mut Running) -> Result<(), WarehouseError> {
        let now = self.clock_us;
        let t = Arc::clone(&run.template);
        let (closure, solver_hit) = self.solver.lookup_or_resolve(&t.packages, &self.manifest)?;
        run.record.solver_hit = solver_hit;
        let env = self
            .env_cache
            .prepare_environment(&closure, &self.config.cost_model(), solver_hit)?;
        run.record.env_hit = env.breakdown.env_hit;

        let reservation = self.scheduler.reservation(q).expect("placed query has a reservation");
        let budget = ResourceBudget::new(reservation, self.config.cpu_ms)?;
        let handle = self.sandboxes.create(q, env.env_id, budget);
        run.sandbox = Some(handle);

        let count = self.config.interpreters_per_query();
        let procs = self.fork_interpreters(q, count, node)?;
        let ids: Vec<ProcessId> = procs.iter().map(|p| p.id).collect();
        self.sandboxes.bind_processes(handle, &ids)?;
        run.record.interpreters = count;
        run.record.env_init_ms = env.init_latency_ms;
        run.record.init_latency_ms = env.init_latency_ms + self.config.clone_ms * u64::from(count);
        let start = now + run.record.init_latency_ms * 1000;
        run.record.init_done_us = start;

        // Intents are declared once per forked process.
        let mut denials = 0;
        for &pid in &ids {
            for intent in &t.udf.intents {
                let ctx = EvalContext {
                    timestamp_us: start,
                    query_id: q,
                    process_id: pid,
                };
                if self.policy.evaluate(intent, &self.log, ctx) == Decision::Deny {
                    denials += 1;
                }
            }
        }
        run.record.denials = denials;

        let ex = self.config.exchange();
        let decision = match self.config.redistribution {
            RedistributionMode::Auto => decide(&self.stats, &t.query_key, self.config.k, ex.threshold_ms),
            RedistributionMode::On => RedistributionDecision::forced(true, ex.threshold_ms),
            RedistributionMode::Off => RedistributionDecision::forced(false, ex.threshold_ms),
        };
        run.record.redistributed = decision.enabled;
        for id in &ids {
            self.live.get_mut(id).expect("forked").state = ProcessState::Busy;
        }

        let stream = simulate_stream(
            &t.partitions,
            &ids,
            t.udf.per_row_cost_ms,
            decision.enabled,
            ex.batch_rows,
            ex.max_outstanding,
            &ex.cost(),
        );

        let total_rows = t.total_rows();
        let peak = query_peak(&t, self.config.seed, q);
        let limit = self.sandboxes.info(handle).expect("live sandbox").budget.memory_bytes;
        let cpu_limit_us = self.config.cpu_ms * 1000;

        let mut rows_done = 0u64;
        let mut end = stream.makespan_us;
        let mut status = QueryStatus::Success;
        let mut error = None;
        let mut completed = stream.completions.len();
        let sample_at = |rows_done: u64| -> u64 {
            if total_rows == 0 {
                peak
            } else {
                ((peak as u128 * rows_done as u128).div_ceil(total_rows as u128)) as u64
            }
        };
        if stream.completions.is_empty() {
            let s = sample_at(0);
            self.stats.record_sample(&t.query_key, q, s)?;
            if enforce_limit(q, limit, s) == LimitCheck::OomKilled {
                status = QueryStatus::Oom;
            }
        }
        for (i, c) in stream.completions.iter().enumerate() {
            if c.time_us > cpu_limit_us {
                end = cpu_limit_us;
                status = QueryStatus::Failed;
                error = Some(format!("cpu budget of {} ms exceeded", self.config.cpu_ms));
                completed = i;
                break;
            }
            rows_done += c.rows;
            let s = sample_at(rows_done);
            self.stats.record_sample(&t.query_key, q, s)?;
            if enforce_limit(q, limit, s) == LimitCheck::OomKilled {
                end = c.time_us;
                status = QueryStatus::Oom;
                completed = i + 1;
                break;
            }
        }
        run.record.observed_max_bytes = self.stats.running_max(q).unwrap_or(0);
        run.record.discarded_batches = (stream.completions.len() - completed) as u64;
        self.sandboxes.set_in_flight(handle, run.record.discarded_batches)?;
        run.record.status = status;
        run.record.error = error;
        run.record.finish_us = start + end;
        run.executed = true;
        Ok(())
    }

    fn on_finish(&mut self, q: QueryId) -> Result<(), WarehouseError> {
        let mut run = self.running.remove(&q).expect("running query");
        let key = &run.template.query_key;
        if run.executed {
            self.stats.finalize_execution(key, q)?;
            self.stats.record_per_row_ms(key, run.template.udf.per_row_cost_ms);
        } else {
            self.stats.discard(q);
        }
        self.scheduler.release(q)?;
        if let Some(h) = run.sandbox {
            let report = self.sandboxes.teardown(h)?;
            for pid in report.processes {
                self.live.remove(&pid);
            }
        }
        run.record.finish_us = run.record.finish_us.max(self.clock_us);
        self.finished.insert(q, run.record);
        for (entry, node) in self.scheduler.drain() {
            self.start(entry.query_id, node)?;
        }
        Ok(())
    }
}

/// Runs a whole workload on a fresh warehouse with its own solver cache.
pub fn run_workload(
    config: &RunConfig,
    manifest: Arc<RepositoryManifest>,
    policy: SandboxPolicy,
    workload: &Workload,
) -> Result<VirtualWarehouse, WarehouseError> {
    let mut wh = VirtualWarehouse::new(config.clone(), manifest, policy, Arc::new(SolverCache::new()))?;
    let templates: Vec<Arc<QueryTemplate>> = workload.templates.iter().cloned().map(Arc::new).collect();
    for s in workload.submissions(config.arrival_interval_ms) {
        wh.submit_shared(Arc::clone(&templates[s.template]), s.submit_us);
    }
    wh.run_until_idle()?;
    Ok(wh)
}
