use std::collections::{BTreeMap, BTreeSet};

use crate::ids::{ProcessId, QueryId};

use super::{ResourceBudget, SandboxError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SandboxHandle(u64);

impl SandboxHandle {
    pub fn id(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxInfo {
    pub query_id: QueryId,
    pub env_id: u64,
    pub budget: ResourceBudget,
    pub processes: Vec<ProcessId>,
    pub in_flight_batches: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeardownReport {
    pub query_id: QueryId,
    pub processes: Vec<ProcessId>,
    /// Batches still queued or executing at teardown; their rows are dropped.
    pub discarded_batches: u64,
}

/// Live sandboxes by handle. Holds no package state, so teardown cannot
/// touch the environment cache.
#[derive(Debug, Default)]
pub struct SandboxManager {
    next: u64,
    live: BTreeMap<SandboxHandle, SandboxInfo>,
    dead: BTreeSet<SandboxHandle>,
}

impl SandboxManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&mut self, query_id: QueryId, env_id: u64, budget: ResourceBudget) -> SandboxHandle {
        let h = SandboxHandle(self.next);
        self.next += 1;
        self.live.insert(
            h,
            SandboxInfo {
                query_id,
                env_id,
                budget,
                processes: Vec::new(),
                in_flight_batches: 0,
            },
        );
        h
    }

    fn get_mut(&mut self, h: SandboxHandle) -> Result<&mut SandboxInfo, SandboxError> {
        if self.dead.contains(&h) {
            return Err(SandboxError::AlreadyTornDown(h.0));
        }
        self.live.get_mut(&h).ok_or(SandboxError::UnknownSandbox(h.0))
    }

    pub fn info(&self, h: SandboxHandle) -> Option<&SandboxInfo> {
        self.live.get(&h)
    }

    pub fn bind_processes(&mut self, h: SandboxHandle, processes: &[ProcessId]) -> Result<(), SandboxError> {
        self.get_mut(h)?.processes.extend_from_slice(processes);
        Ok(())
    }

    pub fn set_in_flight(&mut self, h: SandboxHandle, batches: u64) -> Result<(), SandboxError> {
        self.get_mut(h)?.in_flight_batches = batches;
        Ok(())
    }

    pub fn teardown(&mut self, h: SandboxHandle) -> Result<TeardownReport, SandboxError> {
        self.get_mut(h)?;
        let info = self.live.remove(&h).expect("checked above");
        self.dead.insert(h);
        Ok(TeardownReport {
            query_id: info.query_id,
            processes: info.processes,
            discarded_batches: info.in_flight_batches,
        })
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    /// Processes bound to any live sandbox.
    pub fn live_processes(&self) -> impl Iterator<Item = (QueryId, ProcessId)> + '_ {
        self.live
            .values()
            .flat_map(|i| i.processes.iter().map(move |p| (i.query_id, *p)))
    }
}
