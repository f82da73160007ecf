use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::ids::{ProcessId, QueryId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DenialKind {
    Syscall,
    Egress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DenialEvent {
    pub timestamp_us: u64,
    pub seq: u64,
    pub query_id: QueryId,
    pub process_id: ProcessId,
    pub kind: DenialKind,
    /// Syscall name or `host:port`.
    pub target: String,
    pub args: BTreeMap<String, String>,
}

/// Append-only record of every denied syscall and egress attempt.
#[derive(Debug, Default)]
pub struct SupervisorLog {
    events: Mutex<Vec<DenialEvent>>,
    seq: AtomicU64,
}

impl SupervisorLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn append(
        &self,
        timestamp_us: u64,
        query_id: QueryId,
        process_id: ProcessId,
        kind: DenialKind,
        target: String,
        args: BTreeMap<String, String>,
    ) {
        let mut events = self.events.lock().expect("supervisor log lock");
        let seq = self.seq.fetch_add(1, Ordering::Relaxed);
        events.push(DenialEvent {
            timestamp_us,
            seq,
            query_id,
            process_id,
            kind,
            target,
            args,
        });
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("supervisor log lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Events ordered by timestamp, then arrival sequence.
    pub fn events(&self) -> Vec<DenialEvent> {
        let mut v = self.events.lock().expect("supervisor log lock").clone();
        v.sort_by_key(|e| (e.timestamp_us, e.seq));
        v
    }

    pub fn count_for(&self, query_id: QueryId) -> usize {
        self.events
            .lock()
            .expect("supervisor log lock")
            .iter()
            .filter(|e| e.query_id == query_id)
            .count()
    }
}
