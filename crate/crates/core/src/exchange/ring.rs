use crate::ids::{NodeId, ProcessId};

/// Every interpreter process of a query, sorted by (node, process).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetRing {
    targets: Vec<ProcessId>,
    cursor: usize,
}

impl TargetRing {
    /// Panics on an empty target list.
    pub fn new(mut targets: Vec<ProcessId>) -> Self {
        assert!(!targets.is_empty(), "target ring must be non-empty");
        targets.sort();
        targets.dedup();
        Self { targets, cursor: 0 }
    }

    pub fn with_cursor(mut self, cursor: usize) -> Self {
        self.cursor = cursor % self.targets.len();
        self
    }

    pub fn targets(&self) -> &[ProcessId] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn assign(&self, row_index: u64) -> ProcessId {
        let m = self.targets.len() as u64;
        self.targets[((self.cursor as u64 + row_index % m) % m) as usize]
    }
}

pub fn assign(ring: &TargetRing, row_index: u64) -> ProcessId {
    ring.assign(row_index)
}

/// A full grid of `nodes × procs_per_node` processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub nodes: u32,
    pub procs_per_node: u32,
}

impl Layout {
    pub fn new(nodes: u32, procs_per_node: u32) -> Self {
        assert!(nodes >= 1 && procs_per_node >= 1, "layout must be non-empty");
        Self { nodes, procs_per_node }
    }

    pub fn processes(&self) -> Vec<ProcessId> {
        (0..self.nodes)
            .flat_map(|n| (0..self.procs_per_node).map(move |p| ProcessId::new(n, p)))
            .collect()
    }
}

/// Distinct nodes among the processes, ascending.
pub fn nodes_of(processes: &[ProcessId]) -> Vec<NodeId> {
    let mut v: Vec<NodeId> = processes.iter().map(|p| p.node).collect();
    v.sort_unstable();
    v.dedup();
    v
}
